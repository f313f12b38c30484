#include "heterolora/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace heterolora {

namespace {

using nlohmann::json;

constexpr char kMagic[] = "HLCKPT1\n";
constexpr std::size_t kMagicLen = 8;

json model_config_json(const ModelConfig& c) {
    return json{{"d_model", c.d_model},
                {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},
                {"vocab_size", c.vocab_size},
                {"max_seq_len", c.max_seq_len},
                {"head", c.head_type == HeadType::Classification ? "classification" : "causal_lm"},
                {"n_classes", c.n_classes},
                {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.head_type = j.at("head").get<std::string>() == "classification" ? HeadType::Classification
                                                                      : HeadType::CausalLm;
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
    json header;
    header["format"] = "heterolora-checkpoint";
    header["version"] = 1;
    header["model"] = model_config_json(model.config());

    json adapters = json::array();
    for (const auto& [id, ad] : model.registry()) {
        adapters.push_back(json{{"layer", id.layer},
                                {"site", site_name(id.site)},
                                {"rank", ad.rank},
                                {"alpha", ad.alpha},
                                {"enabled", ad.enabled}});
    }
    header["adapters"] = adapters;

    auto params = model.named_parameters();
    json manifest = json::array();
    for (const auto& [name, t] : params) {
        manifest.push_back(json{{"name", name}, {"shape", t.shape()}, {"requires_grad", t.requires_grad()}});
    }
    header["tensors"] = manifest;

    const std::string header_str = header.dump();
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + kMagicLen);
    append_u64(out, header_str.size());
    out.insert(out.end(), header_str.begin(), header_str.end());
    for (const auto& [name, t] : params) {
        const auto& v = t.values();
        const std::size_t bytes = v.size() * sizeof(double);
        const std::size_t off = out.size();
        out.resize(off + bytes);
        std::memcpy(out.data() + off, v.data(), bytes);
    }
    return out;
}

Model deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kMagicLen + 8 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
        throw ContractError("checkpoint: bad magic");
    }
    const std::uint64_t header_len = read_u64(bytes.data() + kMagicLen);
    if (bytes.size() < kMagicLen + 8 + header_len) throw ContractError("checkpoint: truncated header");
    const char* hp = reinterpret_cast<const char*>(bytes.data() + kMagicLen + 8);
    json header = json::parse(std::string(hp, header_len));

    Model model(model_config_from_json(header.at("model")));

    // Reinstall adapters; parameter values are overwritten from the payload.
    for (const auto& aj : header.at("adapters")) {
        ModuleId id{aj.at("layer").get<std::size_t>(), site_from_name(aj.at("site").get<std::string>())};
        Adapter ad;
        ad.id = id;
        ad.rank = aj.at("rank").get<std::size_t>();
        ad.alpha = aj.at("alpha").get<double>();
        ad.enabled = aj.at("enabled").get<bool>();
        const std::size_t d = model.config().d_model;
        switch (id.site) {
            case Site::q_proj: ad.w0 = model.layer(id.layer).wq; break;
            case Site::k_proj: ad.w0 = model.layer(id.layer).wk; break;
            case Site::v_proj: ad.w0 = model.layer(id.layer).wv; break;
            case Site::o_proj: ad.w0 = model.layer(id.layer).wo; break;
            case Site::ffn_w1: ad.w0 = model.layer(id.layer).w1; break;
            case Site::ffn_w2: ad.w0 = model.layer(id.layer).w2; break;
            default: ad.w0 = Tensor::zeros({d, d}); break;  // payload restores identity/zero content
        }
        ad.a = Tensor::zeros({ad.d_in(), ad.rank}, true);
        ad.b = Tensor::zeros({ad.rank, ad.d_out()}, true);
        model.registry().install(std::move(ad));
    }

    auto params = model.named_parameters();
    const auto& manifest = header.at("tensors");
    if (manifest.size() != params.size()) {
        throw ContractError("checkpoint: tensor manifest does not match the reconstructed model");
    }
    std::size_t off = kMagicLen + 8 + static_cast<std::size_t>(header_len);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = manifest[i];
        Tensor t = params[i].second;
        if (entry.at("name").get<std::string>() != params[i].first) {
            throw ContractError("checkpoint: tensor order mismatch at '" + params[i].first + "'");
        }
        const auto shape = entry.at("shape").get<Shape>();
        if (shape != t.shape()) throw ContractError("checkpoint: shape mismatch at '" + params[i].first + "'");
        const std::size_t nbytes = t.size() * sizeof(double);
        if (off + nbytes > bytes.size()) throw ContractError("checkpoint: truncated payload");
        std::memcpy(t.values().data(), bytes.data() + off, nbytes);
        t.set_requires_grad(entry.at("requires_grad").get<bool>());
        off += nbytes;
    }
    return model;
}

void save_checkpoint(const Model& model, const std::string& path) {
    auto bytes = serialize_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ContractError("checkpoint: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("checkpoint: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace heterolora
