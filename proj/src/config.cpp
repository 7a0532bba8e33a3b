#include "fsl/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "fsl/error.hpp"

namespace fsl {

std::string to_string(Algorithm algorithm) {
    return algorithm == Algorithm::fes ? "fes" : "fedavg";
}

Algorithm algorithm_from_string(const std::string& name) {
    if (name == "fes") return Algorithm::fes;
    if (name == "fedavg") return Algorithm::fedavg;
    throw ConfigError("unknown algorithm '" + name + "' (expected fes or fedavg)");
}

void ExperimentConfig::validate() const {
    if (data_classes < 2) throw ConfigError("data.classes: need at least 2");
    if (data_samples < 10 * data_classes) {
        throw ConfigError("data.samples: need at least 10 per class");
    }
    if (!(data_separation >= 0.0)) throw ConfigError("data.separation: must be >= 0");
    dims.validate();
    partition.validate(data_classes);
    round.validate();
    if (!(pretrain_lr > 0.0)) throw ConfigError("pretrain.lr: must be > 0");
    if (!(public_fraction >= 0.0) || !(public_fraction < 1.0)) {
        throw ConfigError("pretrain.public_fraction: must lie in [0, 1)");
    }
    if (pretrain_enabled && pretrain_epochs > 0 && public_fraction == 0.0) {
        throw ConfigError("pretrain.public_fraction: pre-training needs a public split > 0");
    }
    if (probe_sigma_l_batches == 0) {
        throw ConfigError("probe.sigma_l_batches: must be >= 1");
    }
}

// Shortest round-trip form; every file writer uses this so that equal doubles
// serialize to equal bytes.
std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(parse_u64(key, v));
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) { return format_double(v); }

// One row per key keeps parsing, serialization and the error message's valid
// key list in lockstep.
struct KeyEntry {
    const char* key;
    void (*set)(ExperimentConfig&, const std::string&, const std::string&);
    std::string (*get)(const ExperimentConfig&);
};

const std::vector<KeyEntry>& key_table() {
    static const std::vector<KeyEntry> table = {
        {"data.samples",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.data_samples = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.data_samples); }},
        {"data.classes",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.data_classes = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.data_classes); }},
        {"data.separation",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.data_separation = parse_double(k, v);
         },
         [](const ExperimentConfig& c) { return fmt(c.data_separation); }},
        {"model.tokens",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.dims.tokens = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.dims.tokens); }},
        {"model.token_width",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.dims.token_width = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.dims.token_width); }},
        {"model.attn_width",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.dims.attn_width = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.dims.attn_width); }},
        {"model.mlp_width",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.dims.mlp_width = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.dims.mlp_width); }},
        {"model.tail_hidden",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.dims.tail_hidden = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.dims.tail_hidden); }},
        {"model.encoder_blocks",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.dims.encoder_blocks = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.dims.encoder_blocks); }},
        {"partition.kind",
         [](ExperimentConfig& c, const std::string&, const std::string& v) {
             c.partition.kind = partition_kind_from_string(v);
         },
         [](const ExperimentConfig& c) { return to_string(c.partition.kind); }},
        {"partition.alpha",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.partition.alpha = parse_double(k, v);
         },
         [](const ExperimentConfig& c) { return fmt(c.partition.alpha); }},
        {"partition.labels_per_client",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.partition.labels_per_client = parse_size(k, v);
         },
         [](const ExperimentConfig& c) {
             return std::to_string(c.partition.labels_per_client);
         }},
        {"partition.test_fraction",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.partition.test_fraction = parse_double(k, v);
         },
         [](const ExperimentConfig& c) { return fmt(c.partition.test_fraction); }},
        {"federation.algorithm",
         [](ExperimentConfig& c, const std::string&, const std::string& v) {
             c.algorithm = algorithm_from_string(v);
         },
         [](const ExperimentConfig& c) { return to_string(c.algorithm); }},
        {"federation.rounds",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.rounds = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.round.rounds); }},
        {"federation.clients",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.clients = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.round.clients); }},
        {"federation.sample_ratio",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.sample_ratio = parse_double(k, v);
         },
         [](const ExperimentConfig& c) { return fmt(c.round.sample_ratio); }},
        {"federation.local_steps",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.local_steps = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.round.local_steps); }},
        {"federation.batch",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.batch = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.round.batch); }},
        {"federation.fedround",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.fedround = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.round.fedround); }},
        {"federation.option",
         [](ExperimentConfig& c, const std::string&, const std::string& v) {
             c.round.option = option_from_string(v);
         },
         [](const ExperimentConfig& c) { return to_string(c.round.option); }},
        {"federation.client_optimizer",
         [](ExperimentConfig& c, const std::string&, const std::string& v) {
             c.round.client_optimizer = optim_kind_from_string(v);
         },
         [](const ExperimentConfig& c) { return to_string(c.round.client_optimizer); }},
        {"federation.client_lr",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.client_lr = parse_double(k, v);
         },
         [](const ExperimentConfig& c) { return fmt(c.round.client_lr); }},
        {"federation.client_momentum",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.client_momentum = parse_double(k, v);
         },
         [](const ExperimentConfig& c) { return fmt(c.round.client_momentum); }},
        {"federation.server_lr",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.server_lr = parse_double(k, v);
         },
         [](const ExperimentConfig& c) { return fmt(c.round.server_lr); }},
        {"federation.server_lr_decay",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.server_lr_decay = parse_double(k, v);
         },
         [](const ExperimentConfig& c) { return fmt(c.round.server_lr_decay); }},
        {"federation.server_lr_decay_every",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.server_lr_decay_every = parse_size(k, v);
         },
         [](const ExperimentConfig& c) {
             return std::to_string(c.round.server_lr_decay_every);
         }},
        {"zo.epsilon",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.zo.epsilon = parse_double(k, v);
         },
         [](const ExperimentConfig& c) { return fmt(c.round.zo.epsilon); }},
        {"zo.num_directions",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.round.zo.num_directions = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.round.zo.num_directions); }},
        {"pretrain.enabled",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.pretrain_enabled = parse_bool(k, v);
         },
         [](const ExperimentConfig& c) {
             return std::string(c.pretrain_enabled ? "true" : "false");
         }},
        {"pretrain.epochs",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.pretrain_epochs = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.pretrain_epochs); }},
        {"pretrain.lr",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.pretrain_lr = parse_double(k, v);
         },
         [](const ExperimentConfig& c) { return fmt(c.pretrain_lr); }},
        {"pretrain.public_fraction",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.public_fraction = parse_double(k, v);
         },
         [](const ExperimentConfig& c) { return fmt(c.public_fraction); }},
        {"probe.cadence",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.probe_cadence = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.probe_cadence); }},
        {"probe.sigma_l_batches",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.probe_sigma_l_batches = parse_size(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.probe_sigma_l_batches); }},
        {"run.seed",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             c.seed = parse_u64(k, v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
    };
    return table;
}

std::string valid_keys() {
    std::string out;
    for (const auto& e : key_table()) {
        if (!out.empty()) out += ", ";
        out += e.key;
    }
    return out;
}

// Single-source-of-truth couplings that follow from other keys.
void finalize(ExperimentConfig& cfg) {
    cfg.dims.classes = cfg.data_classes;
    cfg.partition.clients = cfg.round.clients;
    cfg.round.probe_every = cfg.probe_cadence;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        bool matched = false;
        for (const auto& e : key_table()) {
            if (key == e.key) {
                e.set(cfg, key, value);
                matched = true;
                break;
            }
        }
        if (!matched) {
            throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid_keys());
        }
    }
    finalize(cfg);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& e : key_table()) {
        out += e.key;
        out += " = ";
        out += e.get(cfg);
        out += '\n';
    }
    return out;
}

std::uint64_t config_hash_value(const ExperimentConfig& cfg) {
    const std::string text = serialize_config(cfg);
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
    std::uint64_t h = config_hash_value(cfg);
    static const char* digits = "0123456789abcdef";
    std::string hex(16, '0');
    for (int i = 15; i >= 0; --i) {
        hex[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return hex;
}

}  // namespace fsl
