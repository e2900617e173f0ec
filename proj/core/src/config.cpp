#include "latshield/config.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace latshield {

const std::map<std::string, std::string>& RunConfig::defaults() {
    static const std::map<std::string, std::string> d = {
        {"master_seed", "1"},
        {"output_dir", "out"},
        {"threads", "1"},
        {"arch_seed", "11"},

        {"dataset.n_identities", "64"},
        {"dataset.samples_per_identity", "20"},

        {"schedule.t_train", "200"},
        {"schedule.beta_start", "0.0001"},
        {"schedule.beta_end", "0.02"},
        {"schedule.t_inf", "25"},
        {"schedule.sigma_form", "paper"}, // paper | ddim_sqrt

        {"train.ae.epochs", "800"},
        {"train.ae.batch_size", "8"},
        {"train.ae.lr", "3"},
        {"train.id.epochs", "300"},
        {"train.id.batch_size", "8"},
        {"train.id.lr", "0.1"},
        {"train.id.scale", "10"},
        {"train.diff.epochs", "300"},
        {"train.diff.batch_size", "8"},
        {"train.diff.lr", "0.1"},
        {"train.diff.dropout_p", "0.1"},

        {"attack.epsilon", "0.29411764705882354"}, // 75/255
        {"attack.alpha", "0.0392156862745098"},    // 10/255
        {"attack.n_iters", "100"},
        {"attack.k_sdedit", "3"},
        {"attack.lambda_rule", "dynamic"}, // dynamic | fixed
        {"attack.lambda_value", "1.5"},
        {"attack.lambda_freeze", "false"},
        {"attack.sdedit_grad", "through"}, // through | straight
        {"attack.id_loss_form", "one_minus_cos"}, // one_minus_cos | cos
        {"attack.w", "0"},
        {"attack.n_sources", "20"},

        {"swap.w", "2.0"},
        {"swap.k_swap", "15"},
        {"swap.n_targets", "5"},

        {"defense.blur_sigma", "1.0"},
        {"defense.jpeg_quality", "75"},
        {"defense.purify_k", "3"},

        {"eval.detail", "false"},

        {"transfer.arch_seed", "12"},
    };
    return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    if (defaults().find(key) == defaults().end())
        throw ConfigError("config: unknown key '" + key + "'");
    values_[key] = value;
}

void RunConfig::parse(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                              ": empty key or value");
        set(key, value);
    }
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    RunConfig c;
    c.parse(ss.str(), path);
    return c;
}

std::string RunConfig::str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
}

int RunConfig::integer(const std::string& key) const {
    try {
        size_t pos = 0;
        const std::string v = str(key);
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not an integer: " + str(key));
    }
}

double RunConfig::real(const std::string& key) const {
    try {
        size_t pos = 0;
        const std::string v = str(key);
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not a number: " + str(key));
    }
}

bool RunConfig::boolean(const std::string& key) const {
    const std::string v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: " + v);
}

uint64_t RunConfig::seed(const std::string& key) const {
    try {
        size_t pos = 0;
        const std::string v = str(key);
        const uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not a seed: " + str(key));
    }
}

std::string RunConfig::resolved_json() const {
    nlohmann::json j;
    for (const auto& [k, v] : values_) j[k] = v;
    return j.dump(2);
}

void RunConfig::write_resolved(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream f(std::filesystem::path(dir) / "resolved_config.json", std::ios::trunc);
    if (!f) throw ConfigError("config: cannot write resolved_config.json under " + dir);
    f << resolved_json() << "\n";
}

} // namespace latshield
