#include "forensim/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace forensim::model {

using json = nlohmann::json;

std::string ModelConfig::to_json() const {
    json j;
    j["image_size"] = image_size;
    j["patch"] = patch;
    j["channels"] = channels;
    j["backbone_layers"] = backbone_layers;
    j["backbone_heads"] = backbone_heads;
    j["backbone_mlp_ratio"] = backbone_mlp_ratio;
    j["alpha"] = alpha;
    j["sigma"] = sigma;
    j["top_k"] = top_k;
    j["sim_conv_channels"] = sim_conv_channels;
    j["sim_init_noise"] = sim_init_noise;
    j["heads_per_block"] = heads_per_block;
    j["mssa_mlp_ratio"] = mssa_mlp_ratio;
    j["drop_path_rate"] = drop_path_rate;
    j["map_channels"] = map_channels;
    j["decode_channels"] = decode_channels;
    j["rope_fraction"] = rope_fraction;
    j["eps"] = eps;
    j["no_sim_attn"] = no_sim_attn;
    j["no_mssa"] = no_mssa;
    j["no_detection"] = no_detection;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("image_size", c.image_size);
    get("patch", c.patch);
    get("channels", c.channels);
    get("backbone_layers", c.backbone_layers);
    get("backbone_heads", c.backbone_heads);
    get("backbone_mlp_ratio", c.backbone_mlp_ratio);
    get("alpha", c.alpha);
    get("sigma", c.sigma);
    get("top_k", c.top_k);
    get("sim_conv_channels", c.sim_conv_channels);
    get("sim_init_noise", c.sim_init_noise);
    if (j.contains("heads_per_block")) {
        auto v = j.at("heads_per_block").get<std::vector<int>>();
        if (v.size() != 3) throw std::invalid_argument("heads_per_block must have 3 entries");
        std::copy(v.begin(), v.end(), c.heads_per_block.begin());
    }
    get("mssa_mlp_ratio", c.mssa_mlp_ratio);
    get("drop_path_rate", c.drop_path_rate);
    get("map_channels", c.map_channels);
    get("decode_channels", c.decode_channels);
    get("rope_fraction", c.rope_fraction);
    get("eps", c.eps);
    get("no_sim_attn", c.no_sim_attn);
    get("no_mssa", c.no_mssa);
    get("no_detection", c.no_detection);
    return c;
}

namespace {

sim::SimAttnConfig sim_config(const ModelConfig& m) {
    sim::SimAttnConfig c;
    c.channels = m.channels;
    c.alpha = m.alpha;
    c.sigma = m.sigma;
    c.top_k = m.top_k;
    c.conv_channels = m.sim_conv_channels;
    c.eps = m.eps;
    c.init_noise = m.sim_init_noise;
    c.rope_fraction = m.rope_fraction;
    return c;
}

mssa::MssaConfig mssa_config(const ModelConfig& m) {
    mssa::MssaConfig c;
    c.channels = m.channels;
    c.heads_per_block = m.heads_per_block;
    c.mlp_ratio = m.mssa_mlp_ratio;
    c.drop_path_rate = m.drop_path_rate;
    c.map_channels = m.map_channels;
    c.eps = m.eps;
    c.rope_fraction = m.rope_fraction;
    return c;
}

backbone::BackboneConfig backbone_config(const ModelConfig& m) {
    backbone::BackboneConfig c;
    c.image_size = m.image_size;
    c.patch = m.patch;
    c.channels = m.channels;
    c.layers = m.backbone_layers;
    c.heads = m.backbone_heads;
    c.mlp_ratio = m.backbone_mlp_ratio;
    return c;
}

}  // namespace

ForensimModel::ForensimModel(ModelConfig cfg)
    : cfg_(cfg),
      backbone_("backbone", backbone_config(cfg)),
      sim_("sim", sim_config(cfg)),
      mssa_("mssa", mssa_config(cfg)),
      fusion_("fusion", cfg.fused_channels(), cfg.decode_channels) {}

void ForensimModel::init(nn::ParamStore& ps, Rng& rng) const {
    backbone_.init(ps, rng);
    sim_.init(ps, rng);
    mssa_.init(ps, rng);
    fusion_.init(ps, rng);
}

ModelForward ForensimModel::forward_var(nn::Workspace& ws, const ad::Var& image) const {
    const int g = cfg_.grid(), n = cfg_.tokens();
    ad::Var tokens = backbone_.forward(ws, image);

    ModelForward out;
    ad::Var norm_map;
    if (cfg_.no_sim_attn) {
        out.sim_map = ad::constant(Tensor({1, g, g}, 1.0));
        out.aff_final = nullptr;
        norm_map = ad::constant(Tensor({n, n}, 1.0 / n));
    } else {
        sim::SimilarityOutput s = sim_.forward(ws, tokens);
        out.sim_map = s.sim_map;
        out.aff_final = s.aff_final;
        norm_map = s.norm_map;
    }
    out.mssa_map = cfg_.no_mssa ? ad::constant(Tensor({cfg_.map_channels, g, g}, 1.0))
                                : mssa_.forward(ws, tokens);

    // uniform attention when the similarity branch is ablated
    ad::Var s_logits = out.aff_final ? out.aff_final : ad::constant(Tensor({n, n}, 0.0));
    out.fused_tokens = fusion::fuse(out.mssa_map, out.sim_map, norm_map, s_logits);

    fusion::DecodeOutput dec = fusion_.decode(ws, out.fused_tokens, cfg_.image_size,
                                              cfg_.image_size, !cfg_.no_detection);
    out.mask_logits = dec.mask_logits;
    out.det_score = dec.det_score;
    return out;
}

ModelForward ForensimModel::forward(nn::Workspace& ws, const Tensor& image) const {
    return forward_var(ws, ad::constant(image));
}

namespace {
constexpr char kMagic[8] = {'F', 'S', 'I', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, sizeof(kMagic));
    write_pod(os, kVersion);
    json meta;
    meta["config"] = json::parse(ckpt.config.to_json());
    meta["epoch"] = ckpt.epoch;
    meta["best_val"] = ckpt.best_val;
    meta["rng_state"] = ckpt.rng_state;
    const std::string meta_str = meta.dump();
    write_pod(os, static_cast<std::uint64_t>(meta_str.size()));
    os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    write_pod(os, static_cast<std::uint32_t>(ckpt.params.all().size()));
    for (const auto& [name, tensor] : ckpt.params.all()) {
        write_pod(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(os, static_cast<std::uint32_t>(tensor.ndim()));
        for (int d : tensor.shape()) write_pod(os, static_cast<std::int32_t>(d));
        os.write(reinterpret_cast<const char*>(tensor.data()),
                 static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: version mismatch (file " + std::to_string(version) +
                                 ", supported " + std::to_string(kVersion) + ")");
    const auto meta_len = read_pod<std::uint64_t>(is);
    std::string meta_str(meta_len, '\0');
    is.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    json meta = json::parse(meta_str);

    Checkpoint ckpt;
    ckpt.config = ModelConfig::from_json(meta.at("config").dump());
    ckpt.epoch = meta.at("epoch").get<int>();
    ckpt.best_val = meta.at("best_val").get<double>();
    ckpt.rng_state = meta.at("rng_state").get<std::string>();
    const auto count = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto ndim = read_pod<std::uint32_t>(is);
        Shape shape(ndim);
        for (auto& d : shape) d = read_pod<std::int32_t>(is);
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
        ckpt.params.add(name, std::move(t));
    }
    return ckpt;
}

}  // namespace forensim::model
