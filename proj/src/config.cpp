#include "mfuser/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "mfuser/checkpoint.hpp"
#include "mfuser/mtenhancer.hpp"
#include "mfuser/adapters.hpp"
#include "mfuser/seghead.hpp"

namespace mf {

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "vfm_only") return FusionMode::vfm_only;
    if (s == "vlm_only") return FusionMode::vlm_only;
    if (s == "concat_frozen") return FusionMode::concat_frozen;
    if (s == "fused") return FusionMode::fused;
    throw ConfigError("unknown fusion mode: " + s);
}

std::string fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::vfm_only: return "vfm_only";
        case FusionMode::vlm_only: return "vlm_only";
        case FusionMode::concat_frozen: return "concat_frozen";
        case FusionMode::fused: return "fused";
    }
    throw ConfigError("bad fusion mode");
}

namespace {

struct Field {
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

int64_t to_i64(const std::string& key, const std::string& v) {
    try {
        size_t pos;
        int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an integer: " + v);
    }
}

double to_f64(const std::string& key, const std::string& v) {
    try {
        size_t pos;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: " + v);
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': not a boolean: " + v);
}

std::string f64_str(double d) {
    std::ostringstream o;
    o.precision(17);
    o << d;
    return o.str();
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> kFields = [] {
        std::map<std::string, Field> m;
        auto i64 = [&m](const std::string& k, int64_t ExperimentConfig::* p) {
            m[k] = {[k, p](ExperimentConfig& c, const std::string& v) {
                        c.*p = to_i64(k, v);
                    },
                    [p](const ExperimentConfig& c) { return std::to_string(c.*p); }};
        };
        auto f64 = [&m](const std::string& k, double ExperimentConfig::* p) {
            m[k] = {[k, p](ExperimentConfig& c, const std::string& v) {
                        c.*p = to_f64(k, v);
                    },
                    [p](const ExperimentConfig& c) { return f64_str(c.*p); }};
        };
        auto str = [&m](const std::string& k, std::string ExperimentConfig::* p) {
            m[k] = {[p](ExperimentConfig& c, const std::string& v) { c.*p = v; },
                    [p](const ExperimentConfig& c) { return c.*p; }};
        };
        m["seed"] = {[](ExperimentConfig& c, const std::string& v) {
                         c.seed = static_cast<uint64_t>(to_i64("seed", v));
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.seed); }};
        i64("image_size", &ExperimentConfig::image_size);
        i64("patch_size", &ExperimentConfig::patch_size);
        i64("d_vfm", &ExperimentConfig::d_vfm);
        i64("n_vfm", &ExperimentConfig::n_vfm);
        i64("d_vlm", &ExperimentConfig::d_vlm);
        i64("n_vlm", &ExperimentConfig::n_vlm);
        i64("d_t", &ExperimentConfig::d_t);
        i64("d_low", &ExperimentConfig::d_low);
        i64("d_state", &ExperimentConfig::d_state);
        i64("heads", &ExperimentConfig::heads);
        i64("n_prompts", &ExperimentConfig::n_prompts);
        i64("enhancer_repeats", &ExperimentConfig::enhancer_repeats);
        i64("decoder_stages", &ExperimentConfig::decoder_stages);
        i64("visual_summary_tokens", &ExperimentConfig::visual_summary_tokens);
        str("adapter", &ExperimentConfig::adapter);
        str("fusion", &ExperimentConfig::fusion);
        str("enhancer", &ExperimentConfig::enhancer);
        i64("stride", &ExperimentConfig::stride);
        f64("lr", &ExperimentConfig::lr);
        f64("weight_decay", &ExperimentConfig::weight_decay);
        f64("beta1", &ExperimentConfig::beta1);
        f64("beta2", &ExperimentConfig::beta2);
        i64("batch_size", &ExperimentConfig::batch_size);
        i64("iters", &ExperimentConfig::iters);
        i64("warmup", &ExperimentConfig::warmup);
        f64("lambda_bce", &ExperimentConfig::lambda_bce);
        f64("lambda_dice", &ExperimentConfig::lambda_dice);
        f64("lambda_cls", &ExperimentConfig::lambda_cls);
        str("align_variant", &ExperimentConfig::align_variant);
        f64("tau", &ExperimentConfig::tau);
        str("train_domain", &ExperimentConfig::train_domain);
        str("eval_domains", &ExperimentConfig::eval_domains);
        i64("n_train", &ExperimentConfig::n_train);
        i64("n_eval", &ExperimentConfig::n_eval);
        m["augment"] = {[](ExperimentConfig& c, const std::string& v) {
                            c.augment = to_bool("augment", v);
                        },
                        [](const ExperimentConfig& c) {
                            return std::string(c.augment ? "true" : "false");
                        }};
        i64("log_every", &ExperimentConfig::log_every);
        i64("eval_every", &ExperimentConfig::eval_every);
        return m;
    }();
    return kFields;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key: " + key);
    it->second.set(*this, value);
}

std::string ExperimentConfig::serialize() const {
    std::ostringstream o;
    for (const auto& [k, f] : fields()) o << k << "=" << f.get(*this) << "\n";
    return o.str();
}

std::string ExperimentConfig::hash() const {
    std::string s = serialize();
    return sha256_hex(std::vector<unsigned char>(s.begin(), s.end()));
}

void ExperimentConfig::validate() const {
    adapter_mode_from_string(adapter);
    fusion_mode_from_string(fusion);
    enhancer_mode_from_string(enhancer);
    align_variant_from_string(align_variant);
    FusionMode f = fusion_mode_from_string(fusion);
    AdapterMode a = adapter_mode_from_string(adapter);
    if (f == FusionMode::fused && a == AdapterMode::none)
        throw ConfigError("fusion=fused requires an adapter mode other than none");
    if (f != FusionMode::fused && a != AdapterMode::none)
        throw ConfigError("fusion=" + fusion + " requires adapter=none");
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (iters < 1 || warmup < 0)
        throw ConfigError("need warmup >= 0 and iters >= 1");
    if (tau <= 0) throw ConfigError("tau must be positive");
    if (lambda_bce < 0 || lambda_dice < 0 || lambda_cls < 0)
        throw ConfigError("loss weights must be nonnegative");
    if (image_size % patch_size != 0)
        throw ConfigError("image_size must be divisible by patch_size");
    if (batch_size < 1 || n_train < 1 || n_eval < 1)
        throw ConfigError("batch_size, n_train, n_eval must be >= 1");
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        size_t h = line.find('#');
        if (h != std::string::npos) line = line.substr(0, h);
        size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        size_t e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto strip = [](std::string& s) {
            size_t a = s.find_first_not_of(" \t");
            size_t z = s.find_last_not_of(" \t");
            s = a == std::string::npos ? "" : s.substr(a, z - a + 1);
        };
        strip(key);
        strip(val);
        cfg.set(key, val);
    }
    return cfg;
}

void apply_overrides(ExperimentConfig& cfg,
                     const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) cfg.set(k, v);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

}  // namespace mf
