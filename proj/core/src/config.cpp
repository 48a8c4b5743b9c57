#include "dmz/config.hpp"

#include <functional>
#include <sstream>

#include "dmz/checkpoint.hpp"
#include "dmz/errors.hpp"

namespace dmz::io {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream ss(value);
    T out;
    ss >> out;
    std::string rest;
    if (ss.fail() || (ss >> rest && !rest.empty()))
        throw ConfigError("config: bad value for " + key + ": '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + value + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
    std::vector<T> out;
    if (value == "none") return out;  // explicit empty list
    std::istringstream ss(value);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(parse_number<T>(key, trim(cell)));
    if (out.empty()) throw ConfigError("config: empty list for " + key);
    return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::ostringstream ss;
    for (size_t i = 0; i < v.size(); ++i) ss << (i ? "," : "") << v[i];
    return v.empty() ? "none" : ss.str();
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) +
                              " is not `key = value`");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config: empty key on line " +
                              std::to_string(lineno));
        kv[key] = value;
    }
    return kv;
}

std::map<std::string, std::string> load_kv_file(const std::string& path) {
    return parse_kv_text(read_file(path));
}

void apply_config(train::TrainConfig& cfg,
                  const std::map<std::string, std::string>& kv) {
    using Setter = std::function<void(train::TrainConfig&, const std::string&,
                                      const std::string&)>;
    static const std::map<std::string, Setter> setters = {
        {"T", [](auto& c, auto& k, auto& v) { c.T = parse_number<int>(k, v); }},
        {"n_bits", [](auto& c, auto& k, auto& v) { c.n_bits = parse_number<int>(k, v); }},
        {"batch_size", [](auto& c, auto& k, auto& v) { c.batch_size = parse_number<int>(k, v); }},
        {"learning_rate", [](auto& c, auto& k, auto& v) { c.learning_rate = parse_number<double>(k, v); }},
        {"weight_decay", [](auto& c, auto& k, auto& v) { c.weight_decay = parse_number<double>(k, v); }},
        {"total_iterations", [](auto& c, auto& k, auto& v) { c.total_iterations = parse_number<int64_t>(k, v); }},
        {"ema_decay", [](auto& c, auto& k, auto& v) { c.ema_decay = parse_number<double>(k, v); }},
        {"gamma_ip", [](auto& c, auto& k, auto& v) { c.gamma_ip = parse_number<double>(k, v); }},
        {"temperature_start", [](auto& c, auto& k, auto& v) { c.temperature_start = parse_number<double>(k, v); }},
        {"temperature_end", [](auto& c, auto& k, auto& v) { c.temperature_end = parse_number<double>(k, v); }},
        {"temperature_anneal_iters", [](auto& c, auto& k, auto& v) { c.temperature_anneal_iters = parse_number<int64_t>(k, v); }},
        {"conditioning_mode", [](auto& c, auto&, auto& v) { c.conditioning_mode = denoiser::conditioning_mode_from_string(v); }},
        {"schedule_kind", [](auto& c, auto&, auto& v) { c.schedule_kind = diffusion::schedule_kind_from_string(v); }},
        {"latent_kind", [](auto& c, auto&, auto& v) { c.latent_kind = latent::latent_kind_from_string(v); }},
        {"seed", [](auto& c, auto& k, auto& v) { c.seed = parse_number<uint64_t>(k, v); }},
        {"channels", [](auto& c, auto& k, auto& v) { c.channels = parse_number<int64_t>(k, v); }},
        {"height", [](auto& c, auto& k, auto& v) { c.height = parse_number<int64_t>(k, v); }},
        {"width", [](auto& c, auto& k, auto& v) { c.width = parse_number<int64_t>(k, v); }},
        {"base_channels", [](auto& c, auto& k, auto& v) { c.base_channels = parse_number<int64_t>(k, v); }},
        {"channel_multipliers", [](auto& c, auto& k, auto& v) { c.channel_multipliers = parse_list<int>(k, v); }},
        {"blocks_per_resolution", [](auto& c, auto& k, auto& v) { c.blocks_per_resolution = parse_number<int>(k, v); }},
        {"attention_resolutions", [](auto& c, auto& k, auto& v) { c.attention_resolutions = parse_list<int64_t>(k, v); }},
        {"cross_attention_resolutions", [](auto& c, auto& k, auto& v) { c.cross_attention_resolutions = parse_list<int64_t>(k, v); }},
        {"mid_block_cross_attention", [](auto& c, auto& k, auto& v) { c.mid_block_cross_attention = parse_bool(k, v); }},
        {"z_embed_dim", [](auto& c, auto& k, auto& v) { c.z_embed_dim = parse_number<int64_t>(k, v); }},
        {"z_tokens", [](auto& c, auto& k, auto& v) { c.z_tokens = parse_number<int>(k, v); }},
        {"time_embed_dim", [](auto& c, auto& k, auto& v) { c.time_embed_dim = parse_number<int64_t>(k, v); }},
        {"norm_groups", [](auto& c, auto& k, auto& v) { c.norm_groups = parse_number<int>(k, v); }},
        {"dropout", [](auto& c, auto& k, auto& v) { c.dropout = parse_number<double>(k, v); }},
        {"encoder_blocks", [](auto& c, auto& k, auto& v) { c.encoder_blocks = parse_number<int>(k, v); }},
        {"encoder_channels", [](auto& c, auto& k, auto& v) { c.encoder_channels = parse_list<int64_t>(k, v); }},
        {"checkpoint_every", [](auto& c, auto& k, auto& v) { c.checkpoint_every = parse_number<int64_t>(k, v); }},
        {"log_every", [](auto& c, auto& k, auto& v) { c.log_every = parse_number<int64_t>(k, v); }},
    };
    for (const auto& [key, value] : kv) {
        auto it = setters.find(key);
        if (it == setters.end())
            throw ConfigError("config: unknown key '" + key + "'");
        it->second(cfg, key, value);
    }
}

std::string config_to_kv_text(const train::TrainConfig& c) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "T = " << c.T << '\n'
       << "n_bits = " << c.n_bits << '\n'
       << "batch_size = " << c.batch_size << '\n'
       << "learning_rate = " << c.learning_rate << '\n'
       << "weight_decay = " << c.weight_decay << '\n'
       << "total_iterations = " << c.total_iterations << '\n'
       << "ema_decay = " << c.ema_decay << '\n'
       << "gamma_ip = " << c.gamma_ip << '\n'
       << "temperature_start = " << c.temperature_start << '\n'
       << "temperature_end = " << c.temperature_end << '\n'
       << "temperature_anneal_iters = " << c.temperature_anneal_iters << '\n'
       << "conditioning_mode = " << denoiser::to_string(c.conditioning_mode) << '\n'
       << "schedule_kind = " << diffusion::to_string(c.schedule_kind) << '\n'
       << "latent_kind = " << latent::to_string(c.latent_kind) << '\n'
       << "seed = " << c.seed << '\n'
       << "channels = " << c.channels << '\n'
       << "height = " << c.height << '\n'
       << "width = " << c.width << '\n'
       << "base_channels = " << c.base_channels << '\n'
       << "channel_multipliers = " << join(c.channel_multipliers) << '\n'
       << "blocks_per_resolution = " << c.blocks_per_resolution << '\n'
       << "attention_resolutions = " << join(c.attention_resolutions) << '\n'
       << "cross_attention_resolutions = " << join(c.cross_attention_resolutions) << '\n'
       << "mid_block_cross_attention = " << (c.mid_block_cross_attention ? "true" : "false") << '\n'
       << "z_embed_dim = " << c.z_embed_dim << '\n'
       << "z_tokens = " << c.z_tokens << '\n'
       << "time_embed_dim = " << c.time_embed_dim << '\n'
       << "norm_groups = " << c.norm_groups << '\n'
       << "dropout = " << c.dropout << '\n'
       << "encoder_blocks = " << c.encoder_blocks << '\n'
       << "encoder_channels = " << join(c.encoder_channels) << '\n'
       << "checkpoint_every = " << c.checkpoint_every << '\n'
       << "log_every = " << c.log_every << '\n';
    return ss.str();
}

}  // namespace dmz::io
