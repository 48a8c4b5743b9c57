#include "dmz/serialize.hpp"

#include <json.hpp>

#include "dmz/checkpoint.hpp"
#include "dmz/errors.hpp"

namespace dmz::io {

using nlohmann::json;

namespace {

json tensor_to_json(const Tensor& t) {
    return json{{"shape", t.shape}, {"data", t.data}};
}

Tensor tensor_from_json(const json& j) {
    Tensor t = Tensor::zeros(j.at("shape").get<std::vector<int64_t>>());
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != t.data.size())
        throw CorruptionError("tensor JSON: data length does not match shape");
    t.data = std::move(data);
    return t;
}

json parse(const std::string& path, const char* what) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw CorruptionError(std::string(what) + " file is not valid JSON: " +
                              e.what());
    }
}

}  // namespace

void save_probe(const tools::LinearProbe& probe, const std::string& path) {
    json j{{"kind", "linear_probe"},
           {"n_classes", probe.n_classes},
           {"W", tensor_to_json(probe.W)},
           {"b", tensor_to_json(probe.b)}};
    write_file_atomic(path, j.dump(2) + "\n");
}

tools::LinearProbe load_probe(const std::string& path) {
    json j = parse(path, "probe");
    try {
        if (j.at("kind") != "linear_probe")
            throw CorruptionError("probe file has wrong kind");
        tools::LinearProbe p;
        p.n_classes = j.at("n_classes").get<int>();
        p.W = tensor_from_json(j.at("W"));
        p.b = tensor_from_json(j.at("b"));
        if (p.W.shape.size() != 2 || p.W.shape[1] != p.n_classes ||
            p.b.shape != std::vector<int64_t>{p.n_classes})
            throw CorruptionError("probe file has inconsistent shapes");
        return p;
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("probe file malformed: ") + e.what());
    }
}

void save_ar_prior(const latent::ARPrior& prior, const std::string& path) {
    json j{{"kind", "ar_prior"},
           {"n_bits", prior.n_bits},
           {"weights", prior.weights},
           {"bias", prior.bias}};
    write_file_atomic(path, j.dump(2) + "\n");
}

latent::ARPrior load_ar_prior(const std::string& path) {
    json j = parse(path, "prior");
    try {
        if (j.at("kind") != "ar_prior")
            throw CorruptionError("prior file has wrong kind");
        latent::ARPrior p;
        p.n_bits = j.at("n_bits").get<int>();
        p.weights = j.at("weights").get<std::vector<std::vector<double>>>();
        p.bias = j.at("bias").get<std::vector<double>>();
        if (static_cast<int>(p.weights.size()) != p.n_bits ||
            static_cast<int>(p.bias.size()) != p.n_bits)
            throw CorruptionError("prior file has inconsistent sizes");
        for (int i = 0; i < p.n_bits; ++i)
            if (static_cast<int>(p.weights[static_cast<size_t>(i)].size()) != i)
                throw CorruptionError("prior file has a bad weight row");
        return p;
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("prior file malformed: ") + e.what());
    }
}

void save_latent_map(const translate::LatentMap& map, const std::string& path) {
    json params = json::object();
    for (const auto& name : map.params.names())
        params[name] = tensor_to_json(map.params.at(name).value);
    json j{{"kind", "latent_map"},
           {"n_src", map.n_src},
           {"n_tgt", map.n_tgt},
           {"hidden_layers", map.hidden_layers},
           {"hidden_width", map.hidden_width},
           {"params", params}};
    write_file_atomic(path, j.dump(2) + "\n");
}

std::unique_ptr<translate::LatentMap> load_latent_map(const std::string& path) {
    json j = parse(path, "latent map");
    try {
        if (j.at("kind") != "latent_map")
            throw CorruptionError("latent map file has wrong kind");
        auto map = std::make_unique<translate::LatentMap>();
        map->n_src = j.at("n_src").get<int>();
        map->n_tgt = j.at("n_tgt").get<int>();
        map->hidden_layers = j.at("hidden_layers").get<int>();
        map->hidden_width = j.at("hidden_width").get<int>();
        for (const auto& [name, tj] : j.at("params").items()) {
            Tensor t = tensor_from_json(tj);
            map->params.get_or_create(name, t.shape).value = std::move(t);
        }
        return map;
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("latent map file malformed: ") +
                              e.what());
    }
}

}  // namespace dmz::io
