#include "forensim/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace forensim::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat as_mat(const Tensor& t) {
    if (t.ndim() != 2) throw std::invalid_argument("expected 2D tensor, got " + shape_str(t.shape()));
    return CMapMat(t.data(), t.dim(0), t.dim(1));
}

MapMat as_mat(Tensor& t) {
    if (t.ndim() != 2) throw std::invalid_argument("expected 2D tensor, got " + shape_str(t.shape()));
    return MapMat(t.data(), t.dim(0), t.dim(1));
}

Var make_node(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->val.same_shape(b->val))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->val.shape()) +
                                    " vs " + shape_str(b->val.shape()));
}

Var unary_ew(const Var& a, double (*f)(double), double (*df)(double)) {
    Tensor out = zeros_like(a->val);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a->val[i]);
    return make_node(std::move(out), {a}, [f, df](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * df(a->val[i]);
    });
}

}  // namespace

Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    return n;
}

Var leaf(Tensor v) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = true;
    return n;
}

void backward(const Var& root) {
    if (root->val.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    // iterative topological sort over parents
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.size() == n->val.size()) n->backprop(*n);
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->val[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Var p = n.parents[k];
            if (!p->requires_grad) continue;
            Tensor& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->val[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        Var a = n.parents[0], b = n.parents[1];
        if (a->requires_grad) {
            Tensor& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->val[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        Var a = n.parents[0], b = n.parents[1];
        if (a->requires_grad) {
            Tensor& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * b->val[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * a->val[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return make_node(std::move(out), {a}, [s](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
    });
}

Var add_const(const Var& a, double c) {
    Tensor out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
    return make_node(std::move(out), {a}, [](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Var elu(const Var& a) {
    return unary_ew(
        a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
        [](double x) { return x > 0.0 ? 1.0 : std::exp(x); });
}

Var silu(const Var& a) {
    return unary_ew(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x) {
            double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Var sigmoid(const Var& a) {
    Tensor out = zeros_like(a->val);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a->val[i]));
    Tensor saved = out;
    return make_node(std::move(out), {a}, [saved](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * saved[i] * (1.0 - saved[i]);
    });
}

Var exp_of(const Var& a) {
    Tensor out = zeros_like(a->val);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->val[i]);
    Tensor saved = out;
    return make_node(std::move(out), {a}, [saved](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * saved[i];
    });
}

Var log_of(const Var& a) {
    return unary_ew(
        a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var pow_const(const Var& a, double p) {
    Tensor out = zeros_like(a->val);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(a->val[i], p);
    return make_node(std::move(out), {a}, [p](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            double d = (p == 0.0) ? 0.0 : p * std::pow(a->val[i], p - 1.0);
            g[i] += n.grad[i] * d;
        }
    });
}

Var clamp_min_const(const Var& a, double c) {
    Tensor out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], c);
    return make_node(std::move(out), {a}, [c](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (a->val[i] > c) g[i] += n.grad[i];
    });
}

Var matmul(const Var& a, const Var& b) {
    if (a->val.ndim() != 2 || b->val.ndim() != 2 || a->val.dim(1) != b->val.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a->val.shape()) + " x " +
                                    shape_str(b->val.shape()));
    Tensor out({a->val.dim(0), b->val.dim(1)});
    as_mat(out) = as_mat(a->val) * as_mat(b->val);
    return make_node(std::move(out), {a, b}, [](Node& n) {
        Var a = n.parents[0], b = n.parents[1];
        auto g = as_mat(n.grad);
        if (a->requires_grad) as_mat(a->ensure_grad()) += g * as_mat(b->val).transpose();
        if (b->requires_grad) as_mat(b->ensure_grad()) += as_mat(a->val).transpose() * g;
    });
}

Var transpose(const Var& a) {
    Tensor out({a->val.dim(1), a->val.dim(0)});
    as_mat(out) = as_mat(a->val).transpose();
    return make_node(std::move(out), {a}, [](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        as_mat(a->ensure_grad()) += as_mat(n.grad).transpose();
    });
}

Var softmax_rows(const Var& a) {
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    Tensor out({rows, cols});
    for (int i = 0; i < rows; ++i) {
        double m = -1e300;
        for (int j = 0; j < cols; ++j) m = std::max(m, a->val.at(i, j));
        double z = 0.0;
        for (int j = 0; j < cols; ++j) z += std::exp(a->val.at(i, j) - m);
        for (int j = 0; j < cols; ++j) out.at(i, j) = std::exp(a->val.at(i, j) - m) / z;
    }
    Tensor saved = out;
    return make_node(std::move(out), {a}, [saved, rows, cols](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += n.grad.at(i, j) * saved.at(i, j);
            for (int j = 0; j < cols; ++j) g.at(i, j) += saved.at(i, j) * (n.grad.at(i, j) - dot);
        }
    });
}

Var sum_rows(const Var& a) {
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    Tensor out({rows, 1});
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += a->val.at(i, j);
        out.at(i, 0) = s;
    }
    return make_node(std::move(out), {a}, [rows, cols](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) g.at(i, j) += n.grad.at(i, 0);
    });
}

Var mean_over_rows(const Var& a) {
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    Tensor out({1, cols});
    for (int j = 0; j < cols; ++j) {
        double s = 0.0;
        for (int i = 0; i < rows; ++i) s += a->val.at(i, j);
        out.at(0, j) = s / rows;
    }
    return make_node(std::move(out), {a}, [rows, cols](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) g.at(i, j) += n.grad.at(0, j) / rows;
    });
}

Var add_row_bias(const Var& m, const Var& bias) {
    const int rows = m->val.dim(0), cols = m->val.dim(1);
    if (bias->val.ndim() != 2 || bias->val.dim(0) != 1 || bias->val.dim(1) != cols)
        throw std::invalid_argument("add_row_bias: bias must be 1x" + std::to_string(cols));
    Tensor out = m->val;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out.at(i, j) += bias->val.at(0, j);
    return make_node(std::move(out), {m, bias}, [rows, cols](Node& n) {
        Var m = n.parents[0], bias = n.parents[1];
        if (m->requires_grad) {
            Tensor& g = m->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (bias->requires_grad) {
            Tensor& g = bias->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) g.at(0, j) += n.grad.at(i, j);
        }
    });
}

namespace {
Var rowwise_combine(const Var& m, const Var& col, bool divide) {
    const int rows = m->val.dim(0), cols = m->val.dim(1);
    if (col->val.ndim() != 2 || col->val.dim(0) != rows || col->val.dim(1) != 1)
        throw std::invalid_argument("mul_cols/div_cols: col must be Nx1");
    Tensor out = m->val;
    for (int i = 0; i < rows; ++i) {
        double c = col->val.at(i, 0);
        double f = divide ? 1.0 / c : c;
        for (int j = 0; j < cols; ++j) out.at(i, j) *= f;
    }
    return make_node(std::move(out), {m, col}, [rows, cols, divide](Node& n) {
        Var m = n.parents[0], col = n.parents[1];
        if (m->requires_grad) {
            Tensor& g = m->ensure_grad();
            for (int i = 0; i < rows; ++i) {
                double c = col->val.at(i, 0);
                double f = divide ? 1.0 / c : c;
                for (int j = 0; j < cols; ++j) g.at(i, j) += n.grad.at(i, j) * f;
            }
        }
        if (col->requires_grad) {
            Tensor& g = col->ensure_grad();
            for (int i = 0; i < rows; ++i) {
                double c = col->val.at(i, 0);
                double acc = 0.0;
                for (int j = 0; j < cols; ++j) acc += n.grad.at(i, j) * m->val.at(i, j);
                g.at(i, 0) += divide ? -acc / (c * c) : acc;
            }
        }
    });
}
}  // namespace

Var mul_cols(const Var& m, const Var& col) { return rowwise_combine(m, col, false); }
Var div_cols(const Var& m, const Var& col) { return rowwise_combine(m, col, true); }

Var concat_cols(const Var& a, const Var& b) {
    const int rows = a->val.dim(0);
    if (b->val.dim(0) != rows) throw std::invalid_argument("concat_cols: row mismatch");
    const int ca = a->val.dim(1), cb = b->val.dim(1);
    Tensor out({rows, ca + cb});
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < ca; ++j) out.at(i, j) = a->val.at(i, j);
        for (int j = 0; j < cb; ++j) out.at(i, ca + j) = b->val.at(i, j);
    }
    return make_node(std::move(out), {a, b}, [rows, ca, cb](Node& n) {
        Var a = n.parents[0], b = n.parents[1];
        if (a->requires_grad) {
            Tensor& g = a->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < ca; ++j) g.at(i, j) += n.grad.at(i, j);
        }
        if (b->requires_grad) {
            Tensor& g = b->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cb; ++j) g.at(i, j) += n.grad.at(i, ca + j);
        }
    });
}

Var concat_rows(const Var& a, const Var& b) {
    const int cols = a->val.dim(1);
    if (b->val.dim(1) != cols) throw std::invalid_argument("concat_rows: col mismatch");
    const int ra = a->val.dim(0), rb = b->val.dim(0);
    Tensor out({ra + rb, cols});
    std::copy(a->val.data(), a->val.data() + a->val.size(), out.data());
    std::copy(b->val.data(), b->val.data() + b->val.size(), out.data() + a->val.size());
    return make_node(std::move(out), {a, b}, [ra, rb, cols](Node& n) {
        Var a = n.parents[0], b = n.parents[1];
        if (a->requires_grad) {
            Tensor& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->ensure_grad();
            std::size_t off = static_cast<std::size_t>(ra) * cols;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[off + i];
        }
    });
}

Var slice_cols(const Var& a, int lo, int hi) {
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    if (lo < 0 || hi > cols || lo >= hi) throw std::invalid_argument("slice_cols: bad range");
    Tensor out({rows, hi - lo});
    for (int i = 0; i < rows; ++i)
        for (int j = lo; j < hi; ++j) out.at(i, j - lo) = a->val.at(i, j);
    return make_node(std::move(out), {a}, [rows, lo, hi](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int i = 0; i < rows; ++i)
            for (int j = lo; j < hi; ++j) g.at(i, j) += n.grad.at(i, j - lo);
    });
}

Var slice_rows(const Var& a, int lo, int hi) {
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    if (lo < 0 || hi > rows || lo >= hi) throw std::invalid_argument("slice_rows: bad range");
    Tensor out({hi - lo, cols});
    std::copy(a->val.data() + static_cast<std::size_t>(lo) * cols,
              a->val.data() + static_cast<std::size_t>(hi) * cols, out.data());
    return make_node(std::move(out), {a}, [lo, cols](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        std::size_t off = static_cast<std::size_t>(lo) * cols;
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[off + i] += n.grad[i];
    });
}

Var gather_rows(const Var& a, std::vector<int> idx) {
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    for (int i : idx)
        if (i < 0 || i >= rows) throw std::invalid_argument("gather_rows: index out of range");
    Tensor out({static_cast<int>(idx.size()), cols});
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < cols; ++j) out.at(static_cast<int>(r), j) = a->val.at(idx[r], j);
    return make_node(std::move(out), {a}, [idx, cols](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (int j = 0; j < cols; ++j) g.at(idx[r], j) += n.grad.at(static_cast<int>(r), j);
    });
}

Var l2_normalize_rows(const Var& a) {
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    Tensor out({rows, cols});
    std::vector<double> norms(rows);
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += a->val.at(i, j) * a->val.at(i, j);
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0) throw std::invalid_argument("l2_normalize_rows: zero row");
        for (int j = 0; j < cols; ++j) out.at(i, j) = a->val.at(i, j) / norms[i];
    }
    Tensor saved = out;
    return make_node(std::move(out), {a}, [saved, norms, rows, cols](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += n.grad.at(i, j) * saved.at(i, j);
            for (int j = 0; j < cols; ++j)
                g.at(i, j) += (n.grad.at(i, j) - saved.at(i, j) * dot) / norms[i];
        }
    });
}

Var topk_rows_mean(const Var& a, int k) {
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    if (k < 1 || k > cols) throw std::invalid_argument("topk_rows_mean: k out of range");
    Tensor out({rows, 1});
    std::vector<int> picked(static_cast<std::size_t>(rows) * k);
    std::vector<int> order(cols);
    for (int i = 0; i < rows; ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int x, int y) {
            double vx = a->val.at(i, x), vy = a->val.at(i, y);
            return vx != vy ? vx > vy : x < y;
        });
        double s = 0.0;
        for (int t = 0; t < k; ++t) {
            picked[static_cast<std::size_t>(i) * k + t] = order[t];
            s += a->val.at(i, order[t]);
        }
        out.at(i, 0) = s / k;
    }
    return make_node(std::move(out), {a}, [picked, rows, k](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int i = 0; i < rows; ++i)
            for (int t = 0; t < k; ++t)
                g.at(i, picked[static_cast<std::size_t>(i) * k + t]) += n.grad.at(i, 0) / k;
    });
}

Var sum_all(const Var& a) {
    Tensor out({1});
    double s = 0.0;
    for (std::size_t i = 0; i < a->val.size(); ++i) s += a->val[i];
    out[0] = s;
    return make_node(std::move(out), {a}, [](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
    });
}

Var mean_all(const Var& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a->val.size()));
}

Var reshape(const Var& a, Shape s) {
    Tensor out = a->val.reshaped(std::move(s));
    return make_node(std::move(out), {a}, [](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Var grid_from_tokens(const Var& a) {
    const int n = a->val.dim(0), c = a->val.dim(1);
    const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (g * g != n) throw std::invalid_argument("grid_from_tokens: N must be a perfect square");
    Tensor out({c, g, g});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < g; ++y)
            for (int x = 0; x < g; ++x) out.at(ch, y, x) = a->val.at(y * g + x, ch);
    return make_node(std::move(out), {a}, [c, g](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& gr = a->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < g; ++y)
                for (int x = 0; x < g; ++x) gr.at(y * g + x, ch) += n.grad.at(ch, y, x);
    });
}

Var tokens_from_grid(const Var& a) {
    const int c = a->val.dim(0), h = a->val.dim(1), w = a->val.dim(2);
    Tensor out({h * w, c});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(y * w + x, ch) = a->val.at(ch, y, x);
    return make_node(std::move(out), {a}, [c, h, w](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) g.at(ch, y, x) += n.grad.at(y * w + x, ch);
    });
}

Var rope(const Var& a, const std::vector<int>& positions, double base) {
    const int rows = a->val.dim(0), cols = a->val.dim(1);
    if (cols % 2 != 0) throw std::invalid_argument("rope: channel count must be even");
    if (static_cast<int>(positions.size()) != rows)
        throw std::invalid_argument("rope: positions size mismatch");
    const int pairs = cols / 2;
    std::vector<double> cosv(static_cast<std::size_t>(rows) * pairs),
        sinv(static_cast<std::size_t>(rows) * pairs);
    for (int i = 0; i < rows; ++i) {
        for (int t = 0; t < pairs; ++t) {
            double freq = std::pow(base, -2.0 * t / cols);
            double ang = positions[i] * freq;
            cosv[static_cast<std::size_t>(i) * pairs + t] = std::cos(ang);
            sinv[static_cast<std::size_t>(i) * pairs + t] = std::sin(ang);
        }
    }
    Tensor out({rows, cols});
    for (int i = 0; i < rows; ++i)
        for (int t = 0; t < pairs; ++t) {
            double c = cosv[static_cast<std::size_t>(i) * pairs + t];
            double s = sinv[static_cast<std::size_t>(i) * pairs + t];
            double x = a->val.at(i, 2 * t), y = a->val.at(i, 2 * t + 1);
            out.at(i, 2 * t) = x * c - y * s;
            out.at(i, 2 * t + 1) = x * s + y * c;
        }
    return make_node(std::move(out), {a}, [cosv, sinv, rows, pairs](Node& n) {
        Var a = n.parents[0];
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int i = 0; i < rows; ++i)
            for (int t = 0; t < pairs; ++t) {
                double c = cosv[static_cast<std::size_t>(i) * pairs + t];
                double s = sinv[static_cast<std::size_t>(i) * pairs + t];
                double gx = n.grad.at(i, 2 * t), gy = n.grad.at(i, 2 * t + 1);
                g.at(i, 2 * t) += gx * c + gy * s;
                g.at(i, 2 * t + 1) += -gx * s + gy * c;
            }
    });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const int rows = x->val.dim(0), cols = x->val.dim(1);
    if (gamma->val.size() != static_cast<std::size_t>(cols) || beta->val.size() != static_cast<std::size_t>(cols))
        throw std::invalid_argument("layer_norm_rows: gamma/beta must have C entries");
    Tensor out({rows, cols});
    std::vector<double> inv_std(rows);
    Tensor xhat({rows, cols});
    for (int i = 0; i < rows; ++i) {
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += x->val.at(i, j);
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            double d = x->val.at(i, j) - mean;
            var += d * d;
        }
        var /= cols;
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < cols; ++j) {
            xhat.at(i, j) = (x->val.at(i, j) - mean) * inv_std[i];
            out.at(i, j) = xhat.at(i, j) * gamma->val[static_cast<std::size_t>(j)] +
                           beta->val[static_cast<std::size_t>(j)];
        }
    }
    return make_node(std::move(out), {x, gamma, beta}, [xhat, inv_std, rows, cols](Node& n) {
        Var x = n.parents[0], gamma = n.parents[1], beta = n.parents[2];
        if (gamma->requires_grad) {
            Tensor& g = gamma->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) g[static_cast<std::size_t>(j)] += n.grad.at(i, j) * xhat.at(i, j);
        }
        if (beta->requires_grad) {
            Tensor& g = beta->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) g[static_cast<std::size_t>(j)] += n.grad.at(i, j);
        }
        if (x->requires_grad) {
            Tensor& g = x->ensure_grad();
            for (int i = 0; i < rows; ++i) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int j = 0; j < cols; ++j) {
                    double dy = n.grad.at(i, j) * gamma->val[static_cast<std::size_t>(j)];
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat.at(i, j);
                }
                for (int j = 0; j < cols; ++j) {
                    double dy = n.grad.at(i, j) * gamma->val[static_cast<std::size_t>(j)];
                    g.at(i, j) += inv_std[i] * (dy - sum_dy / cols - xhat.at(i, j) * sum_dy_xhat / cols);
                }
            }
        }
    });
}

Var patches_from_image(const Var& x, int patch) {
    const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
    if (patch < 1 || h % patch != 0 || w % patch != 0)
        throw std::invalid_argument("patches_from_image: size not divisible by patch");
    const int gh = h / patch, gw = w / patch;
    Tensor out({gh * gw, c * patch * patch});
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx)
            for (int ch = 0; ch < c; ++ch)
                for (int iy = 0; iy < patch; ++iy)
                    for (int ix = 0; ix < patch; ++ix)
                        out.at(gy * gw + gx, (ch * patch + iy) * patch + ix) =
                            x->val.at(ch, gy * patch + iy, gx * patch + ix);
    return make_node(std::move(out), {x}, [c, patch, gh, gw](Node& n) {
        Var x = n.parents[0];
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx)
                for (int ch = 0; ch < c; ++ch)
                    for (int iy = 0; iy < patch; ++iy)
                        for (int ix = 0; ix < patch; ++ix)
                            g.at(ch, gy * patch + iy, gx * patch + ix) +=
                                n.grad.at(gy * gw + gx, (ch * patch + iy) * patch + ix);
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int groups) {
    const int cin = x->val.dim(0), h = x->val.dim(1), wd = x->val.dim(2);
    const int cout = w->val.dim(0), cing = w->val.dim(1), kh = w->val.dim(2), kw = w->val.dim(3);
    if (cin % groups != 0 || cout % groups != 0 || cin / groups != cing)
        throw std::invalid_argument("conv2d: group/channel mismatch");
    const int ph = kh / 2, pw = kw / 2;
    const bool has_bias = b && b->val.size() == static_cast<std::size_t>(cout);
    Tensor out({cout, h, wd});
    const int cpg_in = cin / groups, cpg_out = cout / groups;
    for (int oc = 0; oc < cout; ++oc) {
        const int g = oc / cpg_out;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < wd; ++xx) {
                double acc = has_bias ? b->val[static_cast<std::size_t>(oc)] : 0.0;
                for (int ic = 0; ic < cpg_in; ++ic) {
                    const int src_c = g * cpg_in + ic;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int sy = y + ky - ph;
                        if (sy < 0 || sy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int sx = xx + kx - pw;
                            if (sx < 0 || sx >= wd) continue;
                            acc += x->val.at(src_c, sy, sx) * w->val.at(oc, ic, ky, kx);
                        }
                    }
                }
                out.at(oc, y, xx) = acc;
            }
    }
    std::vector<Var> parents = {x, w};
    if (b) parents.push_back(b);
    return make_node(std::move(out), std::move(parents),
                     [cin, h, wd, cout, kh, kw, ph, pw, groups, cpg_in, cpg_out, has_bias](Node& n) {
        Var x = n.parents[0], w = n.parents[1];
        Var b = n.parents.size() > 2 ? n.parents[2] : nullptr;
        Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
        Tensor* gw = w->requires_grad ? &w->ensure_grad() : nullptr;
        Tensor* gb = (b && b->requires_grad) ? &b->ensure_grad() : nullptr;
        for (int oc = 0; oc < cout; ++oc) {
            const int g = oc / cpg_out;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < wd; ++xx) {
                    const double go = n.grad.at(oc, y, xx);
                    if (go == 0.0) continue;
                    if (gb) (*gb)[static_cast<std::size_t>(oc)] += go;
                    for (int ic = 0; ic < cpg_in; ++ic) {
                        const int src_c = g * cpg_in + ic;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int sy = y + ky - ph;
                            if (sy < 0 || sy >= h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int sx = xx + kx - pw;
                                if (sx < 0 || sx >= wd) continue;
                                if (gx) gx->at(src_c, sy, sx) += go * w->val.at(oc, ic, ky, kx);
                                if (gw) gw->at(oc, ic, ky, kx) += go * x->val.at(src_c, sy, sx);
                            }
                        }
                    }
                }
        }
        (void)has_bias;
        (void)cin;
    });
}

Var bilinear_upsample(const Var& x, int out_h, int out_w) {
    const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
    const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
    Tensor out({c, out_h, out_w});
    // precompute interpolation stencil once, shared by value and gradient
    struct Stencil { int y0, y1, x0, x1; double wy, wx; };
    std::vector<Stencil> st(static_cast<std::size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx) {
            double fy = (y + 0.5) * sy - 0.5, fx = (xx + 0.5) * sx - 0.5;
            fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
            fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
            Stencil& s = st[static_cast<std::size_t>(y) * out_w + xx];
            s.y0 = static_cast<int>(fy);
            s.x0 = static_cast<int>(fx);
            s.y1 = std::min(s.y0 + 1, h - 1);
            s.x1 = std::min(s.x0 + 1, w - 1);
            s.wy = fy - s.y0;
            s.wx = fx - s.x0;
        }
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < out_h; ++y)
            for (int xx = 0; xx < out_w; ++xx) {
                const Stencil& s = st[static_cast<std::size_t>(y) * out_w + xx];
                out.at(ch, y, xx) = (1 - s.wy) * ((1 - s.wx) * x->val.at(ch, s.y0, s.x0) +
                                                  s.wx * x->val.at(ch, s.y0, s.x1)) +
                                    s.wy * ((1 - s.wx) * x->val.at(ch, s.y1, s.x0) +
                                            s.wx * x->val.at(ch, s.y1, s.x1));
            }
    return make_node(std::move(out), {x}, [st, c, out_h, out_w](Node& n) {
        Var x = n.parents[0];
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < out_h; ++y)
                for (int xx = 0; xx < out_w; ++xx) {
                    const auto& s = st[static_cast<std::size_t>(y) * out_w + xx];
                    const double go = n.grad.at(ch, y, xx);
                    g.at(ch, s.y0, s.x0) += go * (1 - s.wy) * (1 - s.wx);
                    g.at(ch, s.y0, s.x1) += go * (1 - s.wy) * s.wx;
                    g.at(ch, s.y1, s.x0) += go * s.wy * (1 - s.wx);
                    g.at(ch, s.y1, s.x1) += go * s.wy * s.wx;
                }
    });
}

Var global_avg_pool(const Var& x) {
    const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
    Tensor out({1, c});
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) s += x->val.at(ch, y, xx);
        out.at(0, ch) = s / (h * w);
    }
    return make_node(std::move(out), {x}, [c, h, w](Node& n) {
        Var x = n.parents[0];
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        const double inv = 1.0 / (h * w);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) g.at(ch, y, xx) += n.grad.at(0, ch) * inv;
    });
}

namespace {
// shared helper for channel softmax ops on C x H x W
void channel_softmax_values(const Tensor& x, Tensor& probs) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            double m = -1e300;
            for (int ch = 0; ch < c; ++ch) m = std::max(m, x.at(ch, y, xx));
            double z = 0.0;
            for (int ch = 0; ch < c; ++ch) z += std::exp(x.at(ch, y, xx) - m);
            for (int ch = 0; ch < c; ++ch) probs.at(ch, y, xx) = std::exp(x.at(ch, y, xx) - m) / z;
        }
}
}  // namespace

Var softmax_channels(const Var& x) {
    Tensor out = zeros_like(x->val);
    channel_softmax_values(x->val, out);
    Tensor saved = out;
    const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
    return make_node(std::move(out), {x}, [saved, c, h, w](Node& n) {
        Var x = n.parents[0];
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double dot = 0.0;
                for (int ch = 0; ch < c; ++ch) dot += n.grad.at(ch, y, xx) * saved.at(ch, y, xx);
                for (int ch = 0; ch < c; ++ch)
                    g.at(ch, y, xx) += saved.at(ch, y, xx) * (n.grad.at(ch, y, xx) - dot);
            }
    });
}

Var log_softmax_channels(const Var& x) {
    const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
    Tensor probs = zeros_like(x->val);
    channel_softmax_values(x->val, probs);
    Tensor out = zeros_like(x->val);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(probs[i]);
    return make_node(std::move(out), {x}, [probs, c, h, w](Node& n) {
        Var x = n.parents[0];
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double sum_g = 0.0;
                for (int ch = 0; ch < c; ++ch) sum_g += n.grad.at(ch, y, xx);
                for (int ch = 0; ch < c; ++ch)
                    g.at(ch, y, xx) += n.grad.at(ch, y, xx) - probs.at(ch, y, xx) * sum_g;
            }
    });
}

Var sum_channels(const Var& x) {
    const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
    Tensor out({1, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at(0, y, xx) += x->val.at(ch, y, xx);
    return make_node(std::move(out), {x}, [c, h, w](Node& n) {
        Var x = n.parents[0];
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) g.at(ch, y, xx) += n.grad.at(0, y, xx);
    });
}

Var slice_channel(const Var& x, int c) {
    const int cc = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
    if (c < 0 || c >= cc) throw std::invalid_argument("slice_channel: index out of range");
    Tensor out({1, h, w});
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) out.at(0, y, xx) = x->val.at(c, y, xx);
    return make_node(std::move(out), {x}, [c, h, w](Node& n) {
        Var x = n.parents[0];
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) g.at(c, y, xx) += n.grad.at(0, y, xx);
    });
}

Var causal_normalized_attention(const Var& cb, const Var& bb, const Var& x,
                                double d_residual, double eps) {
    const int L = cb->val.dim(0), d = cb->val.dim(1), C = x->val.dim(1);
    if (bb->val.dim(0) != L || bb->val.dim(1) != d || x->val.dim(0) != L)
        throw std::invalid_argument("causal_normalized_attention: shape mismatch");
    Tensor out({L, C});
    Tensor h({L, static_cast<int>(d * C)});  // running h_k flattened, saved for backward
    Tensor nvec({L, d});
    std::vector<double> denom(L);
    {
        std::vector<double> hcur(static_cast<std::size_t>(d) * C, 0.0), ncur(d, 0.0);
        for (int k = 0; k < L; ++k) {
            for (int t = 0; t < d; ++t) {
                const double bkt = bb->val.at(k, t);
                ncur[static_cast<std::size_t>(t)] += bkt;
                for (int c = 0; c < C; ++c)
                    hcur[static_cast<std::size_t>(t) * C + c] += bkt * x->val.at(k, c);
            }
            double s = eps;
            for (int t = 0; t < d; ++t) s += cb->val.at(k, t) * ncur[static_cast<std::size_t>(t)];
            if (s <= eps && eps > 0.0)
                throw std::domain_error("causal_normalized_attention: denominator at or below eps");
            if (s <= 0.0)
                throw std::domain_error("causal_normalized_attention: nonpositive denominator");
            denom[k] = s;
            for (int c = 0; c < C; ++c) {
                double u = 0.0;
                for (int t = 0; t < d; ++t) u += cb->val.at(k, t) * hcur[static_cast<std::size_t>(t) * C + c];
                out.at(k, c) = u / s + d_residual * x->val.at(k, c);
            }
            std::copy(hcur.begin(), hcur.end(), h.data() + static_cast<std::size_t>(k) * d * C);
            std::copy(ncur.begin(), ncur.end(), nvec.data() + static_cast<std::size_t>(k) * d);
        }
    }
    return make_node(std::move(out), {cb, bb, x},
                     [h, nvec, denom, L, d, C, d_residual](Node& n) {
        Var cb = n.parents[0], bb = n.parents[1], x = n.parents[2];
        Tensor* gcb = cb->requires_grad ? &cb->ensure_grad() : nullptr;
        Tensor* gbb = bb->requires_grad ? &bb->ensure_grad() : nullptr;
        Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
        // suffix accumulators: G = sum_{k>=j} cb_k^T g_k / s_k  (d x C),
        // m = sum_{k>=j} -(g_k . u_k)/s_k^2 cb_k  (d)
        std::vector<double> G(static_cast<std::size_t>(d) * C, 0.0), m(d, 0.0);
        for (int k = L - 1; k >= 0; --k) {
            const double s = denom[k];
            // u_k = cb_k h_k: recompute from saved h
            double gdotu = 0.0;
            for (int c = 0; c < C; ++c) {
                double u = 0.0;
                for (int t = 0; t < d; ++t)
                    u += cb->val.at(k, t) * h[static_cast<std::size_t>(k) * d * C + static_cast<std::size_t>(t) * C + c];
                gdotu += n.grad.at(k, c) * u;
            }
            if (gcb) {
                for (int t = 0; t < d; ++t) {
                    double acc = 0.0;
                    for (int c = 0; c < C; ++c)
                        acc += n.grad.at(k, c) *
                               h[static_cast<std::size_t>(k) * d * C + static_cast<std::size_t>(t) * C + c];
                    gcb->at(k, t) += acc / s - gdotu / (s * s) * nvec.at(k, t);
                }
            }
            for (int t = 0; t < d; ++t) {
                for (int c = 0; c < C; ++c)
                    G[static_cast<std::size_t>(t) * C + c] += cb->val.at(k, t) * n.grad.at(k, c) / s;
                m[static_cast<std::size_t>(t)] += -gdotu / (s * s) * cb->val.at(k, t);
            }
            if (gbb) {
                for (int t = 0; t < d; ++t) {
                    double acc = m[static_cast<std::size_t>(t)];
                    for (int c = 0; c < C; ++c)
                        acc += G[static_cast<std::size_t>(t) * C + c] * x->val.at(k, c);
                    gbb->at(k, t) += acc;
                }
            }
            if (gx) {
                for (int c = 0; c < C; ++c) {
                    double acc = d_residual * n.grad.at(k, c);
                    for (int t = 0; t < d; ++t)
                        acc += bb->val.at(k, t) * G[static_cast<std::size_t>(t) * C + c];
                    gx->at(k, c) += acc;
                }
            }
        }
    });
}

}  // namespace forensim::ad
