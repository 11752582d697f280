#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dla/dataset.hpp"
#include "dla/train.hpp"

namespace dla {

// Flat key=value text; '#' starts a comment, blank lines ignored.
class KeyValueFile {
public:
    static KeyValueFile parse_file(const std::string& path);
    static KeyValueFile parse_text(const std::string& text, const std::string& origin);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;

    // Every key must have been consumed by a getter; call after parsing a
    // config to reject misspelled fields.
    void require_all_consumed() const;

private:
    std::string origin_;
    std::vector<std::pair<std::string, std::string>> entries_;
    mutable std::vector<bool> consumed_;

    const std::string* find(const std::string& key) const;
};

ExperimentConfig parse_experiment_config(const std::string& path);
DatasetSpec parse_dataset_spec(const std::string& path);

// Network description stored next to a checkpoint so `eval` and
// `dump-attention` can rebuild the right architecture.
void write_network_sidecar(const std::string& path, const NetworkConfig& cfg);
NetworkConfig read_network_sidecar(const std::string& path);

}  // namespace dla
