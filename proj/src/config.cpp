#include "dla/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace dla {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueFile KeyValueFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_text(text.str(), path);
}

KeyValueFile KeyValueFile::parse_text(const std::string& text, const std::string& origin) {
    KeyValueFile kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value, got '" +
                              line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        for (const auto& [k, v] : kv.entries_)
            if (k == key)
                throw ConfigError(origin + ": duplicate key '" + key + "'");
        kv.entries_.emplace_back(key, value);
    }
    kv.consumed_.assign(kv.entries_.size(), false);
    return kv;
}

const std::string* KeyValueFile::find(const std::string& key) const {
    for (size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].first == key) {
            consumed_[i] = true;
            return &entries_[i].second;
        }
    return nullptr;
}

bool KeyValueFile::has(const std::string& key) const { return find(key) != nullptr; }

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

long KeyValueFile::get_int(const std::string& key, long fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        size_t used = 0;
        const long parsed = std::stol(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": field '" + key + "': not an integer: '" + *v + "'");
    }
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        size_t used = 0;
        const double parsed = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": field '" + key + "': not a number: '" + *v + "'");
    }
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (*v == "1" || *v == "true" || *v == "yes") return true;
    if (*v == "0" || *v == "false" || *v == "no") return false;
    throw ConfigError(origin_ + ": field '" + key + "': not a boolean: '" + *v + "'");
}

std::vector<int> KeyValueFile::get_int_list(const std::string& key, std::vector<int> fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::vector<int> out;
    std::istringstream in(*v);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ": field '" + key + "': bad list element '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError(origin_ + ": field '" + key + "': empty list");
    return out;
}

void KeyValueFile::require_all_consumed() const {
    for (size_t i = 0; i < entries_.size(); ++i)
        if (!consumed_[i])
            throw ConfigError(origin_ + ": unknown field '" + entries_[i].first + "'");
}

ExperimentConfig parse_experiment_config(const std::string& path) {
    KeyValueFile kv = KeyValueFile::parse_file(path);
    ExperimentConfig cfg;
    cfg.net.variant = variant_from_name(kv.get_string("variant", "none"));
    cfg.net.cell = cell_kind_from_name(kv.get_string("cell", "dsu"));
    cfg.net.state_norm = activation_from_name(kv.get_string("sigma", "sigmoid"));
    cfg.net.heads = static_cast<int>(kv.get_int("heads", 2));
    cfg.net.reduction = static_cast<int>(kv.get_int("reduction", 4));
    cfg.net.stage_widths = kv.get_int_list("widths", {16, 32, 64});
    cfg.net.blocks_per_stage = static_cast<int>(kv.get_int("blocks", 3));
    cfg.net.classes = static_cast<int>(kv.get_int("classes", 10));
    cfg.net.in_channels = static_cast<int>(kv.get_int("in_channels", 3));
    cfg.net.height = static_cast<int>(kv.get_int("height", 16));
    cfg.net.width = static_cast<int>(kv.get_int("width", 16));
    cfg.net.seed = static_cast<uint64_t>(kv.get_int("seed", 1));

    cfg.train.seed = cfg.net.seed;
    cfg.train.epochs = static_cast<int>(kv.get_int("epochs", 30));
    cfg.train.batch = static_cast<int>(kv.get_int("batch", 64));
    cfg.train.schedule.base_lr = kv.get_double("lr", 0.1);
    cfg.train.schedule.milestones = kv.get_int_list("milestones", {15, 25});
    cfg.train.schedule.gamma = kv.get_double("gamma", 0.1);
    cfg.train.momentum = kv.get_double("momentum", 0.9);
    cfg.train.weight_decay = kv.get_double("weight_decay", 1e-4);
    cfg.train.augment = kv.get_bool("augment", true);
    cfg.train.augment_pad = static_cast<int>(kv.get_int("augment_pad", 2));

    cfg.data_path = kv.get_string("data", "");
    cfg.test_data_path = kv.get_string("test_data", "");
    kv.require_all_consumed();

    if (cfg.train.epochs < 0) throw ConfigError(path + ": field 'epochs': must be >= 0");
    if (cfg.train.batch < 1) throw ConfigError(path + ": field 'batch': must be >= 1");
    cfg.train.schedule.validate();
    cfg.net.validate();
    return cfg;
}

DatasetSpec parse_dataset_spec(const std::string& path) {
    KeyValueFile kv = KeyValueFile::parse_file(path);
    DatasetSpec spec;
    spec.n_train = static_cast<int>(kv.get_int("n_train", spec.n_train));
    spec.n_test = static_cast<int>(kv.get_int("n_test", spec.n_test));
    spec.classes = static_cast<int>(kv.get_int("classes", spec.classes));
    spec.height = static_cast<int>(kv.get_int("height", spec.height));
    spec.width = static_cast<int>(kv.get_int("width", spec.width));
    spec.channels = static_cast<int>(kv.get_int("channels", spec.channels));
    spec.noise = kv.get_double("noise", spec.noise);
    spec.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<long>(spec.seed)));
    kv.require_all_consumed();
    spec.validate();
    return spec;
}

void write_network_sidecar(const std::string& path, const NetworkConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write sidecar '" + path + "'");
    out << "variant=" << variant_name(cfg.variant) << '\n';
    out << "cell=" << cell_kind_name(cfg.cell) << '\n';
    out << "sigma=" << activation_name(cfg.state_norm) << '\n';
    out << "heads=" << cfg.heads << '\n';
    out << "reduction=" << cfg.reduction << '\n';
    out << "widths=";
    for (size_t i = 0; i < cfg.stage_widths.size(); ++i)
        out << (i ? "," : "") << cfg.stage_widths[i];
    out << '\n';
    out << "blocks=" << cfg.blocks_per_stage << '\n';
    out << "classes=" << cfg.classes << '\n';
    out << "in_channels=" << cfg.in_channels << '\n';
    out << "height=" << cfg.height << '\n';
    out << "width=" << cfg.width << '\n';
    out << "seed=" << cfg.seed << '\n';
}

NetworkConfig read_network_sidecar(const std::string& path) {
    KeyValueFile kv = KeyValueFile::parse_file(path);
    NetworkConfig cfg;
    cfg.variant = variant_from_name(kv.get_string("variant", "none"));
    cfg.cell = cell_kind_from_name(kv.get_string("cell", "dsu"));
    cfg.state_norm = activation_from_name(kv.get_string("sigma", "sigmoid"));
    cfg.heads = static_cast<int>(kv.get_int("heads", 2));
    cfg.reduction = static_cast<int>(kv.get_int("reduction", 4));
    cfg.stage_widths = kv.get_int_list("widths", {16, 32, 64});
    cfg.blocks_per_stage = static_cast<int>(kv.get_int("blocks", 3));
    cfg.classes = static_cast<int>(kv.get_int("classes", 10));
    cfg.in_channels = static_cast<int>(kv.get_int("in_channels", 3));
    cfg.height = static_cast<int>(kv.get_int("height", 16));
    cfg.width = static_cast<int>(kv.get_int("width", 16));
    cfg.seed = static_cast<uint64_t>(kv.get_int("seed", 1));
    kv.require_all_consumed();
    cfg.validate();
    return cfg;
}

}  // namespace dla
