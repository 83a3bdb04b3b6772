#include "kpe_forge/run_config.hpp"

#include "kpe_forge/error.hpp"
#include "kpe_forge/model.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <utility>

namespace kpeforge {

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
    static const std::vector<std::pair<std::string, std::string>> table{
        {"dataset.count", "300"},
        {"dataset.test_fraction", "0.2"},
        {"dataset.max_people", "3"},
        {"dataset.partial_probability", "0.1"},
        {"dataset.canvas", "32"},
        {"dataset.scale_jitter", "0.1"},
        {"tokenizers.bpe_symbols", "48"},
        {"tokenizers.text_length", "16"},
        {"tokenizers.patch", "4"},
        {"tokenizers.code_dim", "16"},
        {"tokenizers.codebook_size", "64"},
        {"tokenizers.kmeans_iterations", "25"},
        {"tokenizers.vq_epochs", "8"},
        {"tokenizers.vq_batch", "16"},
        {"tokenizers.vq_lr", "0.001"},
        {"model.mode", "kpe"},
        {"model.d", "64"},
        {"model.heads", "4"},
        {"model.depth", "2"},
        {"model.mlp_ratio", "4"},
        {"model.scheme", "SKEL13"},
        {"model.max_people", "3"},
        {"model.lambda_image", "7"},
        {"model.lambda_keypoint", "10"},
        {"model.kpe_loss_align", "shifted"},
        {"model.kpe_embedding", "linear"},
        {"model.max_sequence", "2048"},
        {"model.init_scale", "0.02"},
        {"train.epochs", "30"},
        {"train.batch_size", "10"},
        {"train.lr", "0.0001"},
        {"train.plateau_epochs", "12"},
        {"train.lr_factor", "0.5"},
        {"train.min_lr", "0.000001"},
        {"sample.pool_size", "8"},
        {"sample.samples_per_input", "1"},
        {"sample.sampling", "uniform"},
        {"eval.split", "test"},
        {"eval.max_inputs", "0"},
        {"eval.min_mean_oks", "0"},
        {"eval.max_pce_rate", "1"},
        {"bench.runs", "5"},
        {"bench.inputs", "4"},
        {"bench.warmup", "1"},
    };
    return table;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

const std::vector<std::string>& RunConfig::sections() {
    static const std::vector<std::string> s{"dataset", "tokenizers", "model", "train", "sample", "eval", "bench"};
    return s;
}

RunConfig::RunConfig() {
    for (const auto& [k, v] : defaults()) values_[k] = v;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

int RunConfig::getInt(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::logic_error&) {
        throw ConfigError(key + " expects an integer, got '" + v + "'");
    }
}

double RunConfig::getDouble(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::logic_error&) {
        throw ConfigError(key + " expects a number, got '" + v + "'");
    }
}

bool RunConfig::getBool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + " expects true/false, got '" + v + "'");
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig rc;
    std::istringstream is(text);
    std::string line, section;
    int lineNo = 0;
    while (std::getline(is, line)) {
        ++lineNo;
        const auto hashPos = line.find('#');
        if (hashPos != std::string::npos) line.erase(hashPos);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineNo) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            bool known = false;
            for (const auto& s : sections()) known |= s == section;
            if (!known) throw ConfigError("line " + std::to_string(lineNo) + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineNo) + ": expected key = value");
        if (section.empty()) throw ConfigError("line " + std::to_string(lineNo) + ": key outside a section");
        rc.set(section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return rc;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact("config file not found: " + path.string());
    return parse(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
}

std::string RunConfig::hash(const std::vector<std::string>& wanted) const {
    std::string text;
    for (const auto& [k, v] : values_) {
        const std::string section = k.substr(0, k.find('.'));
        bool include = wanted.empty();
        for (const auto& w : wanted) include |= w == section;
        if (include) text += k + "=" + v + "\n";
    }
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
    return buf;
}

std::string RunConfig::dump() const {
    std::string out;
    for (const auto& s : sections()) {
        out += "[" + s + "]\n";
        for (const auto& [k, v] : values_)
            if (k.compare(0, s.size() + 1, s + ".") == 0) out += k.substr(s.size() + 1) + " = " + v + "\n";
        out += "\n";
    }
    return out;
}

} // namespace kpeforge
