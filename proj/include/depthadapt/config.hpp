#pragma once

#include <fstream>
#include <map>
#include <sstream>

#include "depthadapt/augment.hpp"
#include "depthadapt/losses.hpp"
#include "depthadapt/metrics.hpp"
#include "depthadapt/model.hpp"

namespace depthadapt {

struct ConfigKey {
    const char* key;
    const char* def;
    const char* module;
    const char* help;
};

/// Every recognised run-config key with its default and owning module.
inline const std::vector<ConfigKey>& config_registry() {
    static const std::vector<ConfigKey> keys = {
        {"data.source", "data/source", "dataset", "labelled source manifest directory"},
        {"data.target", "data/target", "dataset", "unlabelled target manifest directory"},
        {"data.n_source", "64", "dataset", "toy generation: source sample count"},
        {"data.n_target", "64", "dataset", "toy generation: target sample count"},
        {"data.h", "64", "dataset", "toy generation: image height"},
        {"data.w", "96", "dataset", "toy generation: image width"},
        {"data.seed", "7", "dataset", "toy generation seed"},
        {"aug.set", "s_fm", "augment", "RandAugment op set: s_fm | s_geo"},
        {"aug.n", "1", "augment", "RandAugment chain depth"},
        {"aug.m", "7", "augment", "RandAugment severity, 0..10"},
        {"aug.static_cutout", "true", "augment", "erase one 10%-area rectangle before the chain"},
        {"aug.naive_alignment", "false", "augment", "skip geometric realignment in the consistency loss"},
        {"loss.source_variant", "pairwise_sum", "losses", "pairwise_sum | per_sample | pairwise_separate | none"},
        {"loss.streams", "3", "losses", "perturbation streams per target sample, original included"},
        {"loss.stop_grad_ref", "true", "losses", "treat the unperturbed prediction as a constant pseudo-label"},
        {"loss.alignment", "realign", "losses", "realign | naive"},
        {"batch.N", "12", "losses", "nominal batch size (source pairs per step)"},
        {"batch.r", "2/1", "losses", "supervised/unsupervised ratio"},
        {"model.depth", "4", "model", "down-sampling stages"},
        {"model.base", "16", "model", "channels at full resolution"},
        {"model.max_depth", "16", "model", "output scale in meters"},
        {"train.profile", "desk", "trainer", "desk | paper-scale"},
        {"train.lr", "", "trainer", "learning rate; empty = profile default for the stage"},
        {"train.epochs", "", "trainer", "epoch count; empty = profile default for the stage"},
        {"train.decay_start_epoch", "4", "trainer", "adapt: linear lr decay start"},
        {"train.cutmix_alpha", "0.5", "trainer", "CutMix patch area fraction for pretraining"},
        {"train.batch_pre", "8", "trainer", "pretraining batch size"},
        {"train.seed_model", "1", "trainer", "model initialisation seed"},
        {"train.seed_data", "2", "trainer", "data shuffling/sampling seed"},
        {"train.seed_augment", "3", "trainer", "augmentation seed"},
        {"train.checkpoint_every", "5", "trainer", "checkpoint cadence in epochs (0 = final only)"},
        {"train.grad_clip", "", "trainer", "global-norm clip; empty = profile default"},
        {"train.name", "run", "trainer", "run name under the runs root"},
        {"metrics.cap", "16", "metrics", "depth cap in meters for evaluation"},
        {"metrics.crop", "garg", "metrics", "garg | none"},
        {"metrics.min_depth", "0.001", "metrics", "floor for log/ratio metrics"},
        {"metrics.accuracy", "ratio", "metrics", "ratio | abs_margin"},
        {"metrics.sqrel", "linear_denominator", "metrics", "linear_denominator | squared_denominator"},
    };
    return keys;
}

/// Plain-text key/value run configuration with dotted keys. Unknown keys are
/// rejected, not ignored; CLI overrides are last-writer-wins.
class Config {
  public:
    Config() {
        for (const auto& k : config_registry()) values_[k.key] = k.def;
    }

    static Config from_file(const std::filesystem::path& path) {
        Config cfg;
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot read config file " + path.string());
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                size_t a = s.find_first_not_of(" \t\r");
                if (a == std::string::npos) return std::string();
                size_t b = s.find_last_not_of(" \t\r");
                return s.substr(a, b - a + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) throw ConfigError("unknown config key: " + key);
        values_[key] = value;
    }

    void apply_override(const std::string& kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv);
        set(kv.substr(0, eq), kv.substr(eq + 1));
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key: " + key);
        return it->second;
    }

    int integer(const std::string& key) const {
        try {
            return std::stoi(str(key));
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not an integer: " + str(key));
        }
    }

    double real(const std::string& key) const {
        try {
            return std::stod(str(key));
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not a number: " + str(key));
        }
    }

    bool boolean(const std::string& key) const {
        const auto& v = str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config key " + key + ": not a boolean: " + v);
    }

    bool empty_value(const std::string& key) const { return str(key).empty(); }

    uint64_t hash() const {
        uint64_t h = 1469598103934665603ull;
        for (const auto& [k, v] : values_) {
            h = fnv1a(k.data(), k.size(), h);
            h = fnv1a(v.data(), v.size(), h);
        }
        return h;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    // Typed assemblers ------------------------------------------------------

    RandAugmentPolicy aug_policy() const {
        RandAugmentPolicy p;
        const auto& s = str("aug.set");
        if (s == "s_fm")
            p.set = AugSet::s_fm;
        else if (s == "s_geo")
            p.set = AugSet::s_geo;
        else
            throw ConfigError("aug.set must be s_fm or s_geo, got " + s);
        p.n = integer("aug.n");
        p.m = integer("aug.m");
        p.apply_static_cutout = boolean("aug.static_cutout");
        p.validate();
        return p;
    }

    LossConfig loss_config() const {
        LossConfig l;
        l.source_variant = parse_source_variant(str("loss.source_variant"));
        l.streams = integer("loss.streams");
        l.stop_gradient_on_reference = boolean("loss.stop_grad_ref");
        l.alignment = boolean("aug.naive_alignment") || str("loss.alignment") == "naive" ? Alignment::naive
                                                                                         : Alignment::realign;
        if (str("loss.alignment") != "realign" && str("loss.alignment") != "naive")
            throw ConfigError("loss.alignment must be realign or naive");
        l.validate();
        return l;
    }

    ModelSpec model_spec(int h, int w) const {
        ModelSpec s;
        s.h = h;
        s.w = w;
        s.depth = integer("model.depth");
        s.base = integer("model.base");
        s.max_depth = float(real("model.max_depth"));
        s.validate();
        return s;
    }

    EvalConfig eval_config() const {
        EvalConfig e;
        e.cap = float(real("metrics.cap"));
        const auto& c = str("metrics.crop");
        if (c == "garg")
            e.crop = CropMode::garg;
        else if (c == "none")
            e.crop = CropMode::none;
        else
            throw ConfigError("metrics.crop must be garg or none");
        e.min_depth = float(real("metrics.min_depth"));
        const auto& a = str("metrics.accuracy");
        if (a == "ratio")
            e.accuracy = AccuracyRule::ratio;
        else if (a == "abs_margin")
            e.accuracy = AccuracyRule::abs_margin;
        else
            throw ConfigError("metrics.accuracy must be ratio or abs_margin");
        const auto& q = str("metrics.sqrel");
        if (q == "linear_denominator")
            e.sqrel = SqRelRule::linear_denominator;
        else if (q == "squared_denominator")
            e.sqrel = SqRelRule::squared_denominator;
        else
            throw ConfigError("metrics.sqrel must be linear_denominator or squared_denominator");
        e.validate();
        return e;
    }

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace depthadapt
