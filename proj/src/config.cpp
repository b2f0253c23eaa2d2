#include "s2ap/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace s2ap {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

class KeyValues {
   public:
    explicit KeyValues(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": expected `section.key = value`");
            }
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty() || key.find('.') == std::string::npos) {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": key must look like section.key, got `" + key + "`");
            }
            values_[key] = value;
        }
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        consumed_.insert(key);
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) {
        const std::string raw = get_string(key, "");
        if (raw.empty()) return fallback;
        try {
            size_t pos = 0;
            double v = std::stod(raw, &pos);
            if (pos != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: `" + key + "` expects a number, got `" + raw + "`");
        }
    }

    int64_t get_int(const std::string& key, int64_t fallback) {
        const std::string raw = get_string(key, "");
        if (raw.empty()) return fallback;
        try {
            size_t pos = 0;
            long long v = std::stoll(raw, &pos);
            if (pos != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: `" + key + "` expects an integer, got `" + raw + "`");
        }
    }

    bool get_bool(const std::string& key, bool fallback) {
        const std::string raw = get_string(key, "");
        if (raw.empty()) return fallback;
        if (raw == "true") return true;
        if (raw == "false") return false;
        throw ConfigError("config: `" + key + "` expects true or false, got `" + raw + "`");
    }

    template <typename T, typename Parse>
    std::vector<T> get_list(const std::string& key, const std::vector<T>& fallback, Parse parse) {
        const bool present = has(key);
        const std::string raw = get_string(key, "");
        if (raw.empty()) {
            if (present) throw ConfigError("config: `" + key + "` expects a non-empty list");
            return fallback;
        }
        std::vector<T> out;
        std::istringstream ss(raw);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) throw ConfigError("config: empty item in list `" + key + "`");
            out.push_back(parse(key, item));
        }
        if (out.empty()) throw ConfigError("config: `" + key + "` expects a non-empty list");
        return out;
    }

    std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fb) {
        return get_list<double>(key, fb, [](const std::string& k, const std::string& item) {
            try {
                return std::stod(item);
            } catch (const std::exception&) {
                throw ConfigError("config: bad number `" + item + "` in `" + k + "`");
            }
        });
    }

    std::vector<int64_t> get_int_list(const std::string& key, const std::vector<int64_t>& fb) {
        return get_list<int64_t>(key, fb, [](const std::string& k, const std::string& item) {
            try {
                return static_cast<int64_t>(std::stoll(item));
            } catch (const std::exception&) {
                throw ConfigError("config: bad integer `" + item + "` in `" + k + "`");
            }
        });
    }

    std::vector<uint64_t> get_u64_list(const std::string& key, const std::vector<uint64_t>& fb) {
        return get_list<uint64_t>(key, fb, [](const std::string& k, const std::string& item) {
            try {
                return static_cast<uint64_t>(std::stoull(item));
            } catch (const std::exception&) {
                throw ConfigError("config: bad seed `" + item + "` in `" + k + "`");
            }
        });
    }

    void reject_unknown() const {
        for (const auto& [key, value] : values_) {
            if (!consumed_.count(key)) throw ConfigError("config: unknown key `" + key + "`");
        }
    }

   private:
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

LossKind parse_loss_kind(const std::string& raw) {
    if (raw == "clean_ce") return LossKind::clean_ce;
    if (raw == "pgd_at") return LossKind::pgd_at;
    if (raw == "trades") return LossKind::trades;
    throw ConfigError("config: loss.kind must be clean_ce, pgd_at or trades, got `" + raw + "`");
}

const char* loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::clean_ce: return "clean_ce";
        case LossKind::pgd_at: return "pgd_at";
        case LossKind::trades: return "trades";
    }
    return "?";
}

PruneMode parse_prune_mode(const std::string& raw) {
    if (raw == "baseline") return PruneMode::baseline;
    if (raw == "s2ap") return PruneMode::s2ap;
    if (raw == "awp") return PruneMode::awp;
    throw ConfigError("config: prune.mode must be baseline, s2ap or awp, got `" + raw + "`");
}

}  // namespace

RunConfig RunConfig::from_text(const std::string& text) {
    KeyValues kv(text);
    RunConfig c;

    c.data.kind = kv.get_string("data.kind", c.data.kind);
    if (c.data.kind != "moons" && c.data.kind != "idx")
        throw ConfigError("config: data.kind must be moons or idx");
    c.data.n = kv.get_int("data.n", c.data.n);
    c.data.noise = kv.get_double("data.noise", c.data.noise);
    c.data.train_images = kv.get_string("data.train_images", "");
    c.data.train_labels = kv.get_string("data.train_labels", "");
    c.data.test_images = kv.get_string("data.test_images", "");
    c.data.test_labels = kv.get_string("data.test_labels", "");

    c.model.layers = kv.get_int_list("model.layers", c.model.layers);
    const std::string rank = kv.get_string("model.rank", "magnitude");
    if (rank == "magnitude")
        c.model.rank = RankRule::magnitude;
    else if (rank == "signed")
        c.model.rank = RankRule::signed_value;
    else
        throw ConfigError("config: model.rank must be magnitude or signed");
    c.model.exempt_boundary = kv.get_bool("model.exempt_boundary", c.model.exempt_boundary);

    c.batch_size = static_cast<int>(kv.get_int("train.batch", c.batch_size));

    c.pretrain.epochs = static_cast<int>(kv.get_int("pretrain.epochs", c.pretrain.epochs));
    c.pretrain.eta = kv.get_double("pretrain.eta", c.pretrain.eta);
    c.pretrain.step_decay = kv.get_bool("pretrain.step_decay", c.pretrain.step_decay);

    c.loss.kind = parse_loss_kind(kv.get_string("loss.kind", loss_kind_name(c.loss.kind)));
    c.loss.beta = kv.get_double("loss.beta", c.loss.beta);

    c.attack.epsilon = kv.get_double("attack.epsilon", c.attack.epsilon);
    c.attack.alpha = kv.get_double("attack.alpha", c.attack.alpha);
    c.attack.steps = static_cast<int>(kv.get_int("attack.steps", c.attack.steps));
    c.attack.random_start = kv.get_bool("attack.random_start", c.attack.random_start);
    c.attack.clamp_lo = kv.get_double("attack.clamp_lo", c.attack.clamp_lo);
    c.attack.clamp_hi = kv.get_double("attack.clamp_hi", c.attack.clamp_hi);

    c.eval.attack = c.attack;
    c.eval.attack.steps = 50;
    c.eval.attack.epsilon = kv.get_double("eval.epsilon", c.attack.epsilon);
    c.eval.attack.alpha = kv.get_double("eval.alpha", c.attack.alpha);
    c.eval.attack.steps = static_cast<int>(kv.get_int("eval.steps", c.eval.attack.steps));
    c.eval.restarts = static_cast<int>(kv.get_int("eval.restarts", c.eval.restarts));

    c.prune.sparsity = kv.get_double("prune.sparsity", c.prune.sparsity);
    c.prune.gamma = kv.get_double("prune.gamma", c.prune.gamma);
    c.prune.eta = kv.get_double("prune.eta", c.prune.eta);
    c.prune.epochs = static_cast<int>(kv.get_int("prune.epochs", c.prune.epochs));
    c.prune.warmup_epochs =
        static_cast<int>(kv.get_int("prune.warmup_epochs", c.prune.warmup_epochs));
    c.prune.mode = parse_prune_mode(kv.get_string("prune.mode", prune_mode_name(c.prune.mode)));
    const std::string tracking = kv.get_string("prune.best_tracking", "epoch");
    if (tracking == "epoch")
        c.prune.best_tracking = BestTracking::epoch;
    else if (tracking == "iteration")
        c.prune.best_tracking = BestTracking::iteration;
    else
        throw ConfigError("config: prune.best_tracking must be epoch or iteration");
    c.prune.rlth = kv.get_bool("prune.rlth", c.prune.rlth);

    const std::string ft_mode = kv.get_string("finetune.mode", "s2ap_awp");
    if (ft_mode == "standard")
        c.finetune.mode = FinetuneMode::standard;
    else if (ft_mode == "s2ap_awp")
        c.finetune.mode = FinetuneMode::s2ap_awp;
    else
        throw ConfigError("config: finetune.mode must be standard or s2ap_awp");
    c.finetune.epochs = static_cast<int>(kv.get_int("finetune.epochs", c.finetune.epochs));
    c.finetune.eta = kv.get_double("finetune.eta", c.finetune.eta);
    c.finetune.gamma = kv.get_double("finetune.gamma", c.prune.gamma);
    c.finetune.step_decay = kv.get_bool("finetune.step_decay", c.finetune.step_decay);

    c.diag.enabled = kv.get_bool("diag.enabled", c.diag.enabled);
    c.diag.lambda_iterations =
        static_cast<int>(kv.get_int("diag.lambda_iterations", c.diag.lambda_iterations));
    c.diag.lambda_samples_per_epoch = static_cast<int>(
        kv.get_int("diag.lambda_samples_per_epoch", c.diag.lambda_samples_per_epoch));
    c.diag.rho_grid = kv.get_double_list("diag.rho_grid", c.diag.rho_grid);
    c.diag.lossdiff_steps =
        static_cast<int>(kv.get_int("diag.lossdiff_steps", c.diag.lossdiff_steps));
    c.diag.lossdiff_restarts =
        static_cast<int>(kv.get_int("diag.lossdiff_restarts", c.diag.lossdiff_restarts));
    c.diag.batch = kv.get_int("diag.batch", c.diag.batch);

    c.seeds = kv.get_u64_list("run.seeds", c.seeds);
    c.out_dir = kv.get_string("run.out", c.out_dir);
    c.gamma_grid = kv.get_double_list("sweep.gamma_grid", c.gamma_grid);

    kv.reject_unknown();
    c.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str());
}

void RunConfig::validate() const {
    if (seeds.empty()) throw ConfigError("config: run.seeds must be non-empty");
    if (data.kind == "moons") {
        if (data.n < 2 || data.n % 2 != 0) throw ConfigError("config: data.n must be even, >= 2");
        if (data.noise < 0.0) throw ConfigError("config: data.noise must be >= 0");
    } else if (data.train_images.empty() || data.train_labels.empty() ||
               data.test_images.empty() || data.test_labels.empty()) {
        throw ConfigError("config: idx data needs all four data.*_images/labels paths");
    }
    if (model.layers.size() < 2) throw ConfigError("config: model.layers needs >= 2 entries");
    for (int64_t dim : model.layers)
        if (dim < 1) throw ConfigError("config: model.layers entries must be positive");
    if (batch_size < 1) throw ConfigError("config: train.batch must be >= 1");
    if (pretrain.epochs < 1 || pretrain.eta <= 0.0)
        throw ConfigError("config: pretrain.epochs must be >= 1 and pretrain.eta > 0");
    try {
        loss.validate();
        attack.validate();
        eval.attack.validate();
        PruneConfig p = prune;
        p.loss = loss;
        p.batch_size = batch_size;
        p.validate();
        FinetuneConfig f = finetune;
        f.loss = loss;
        f.batch_size = batch_size;
        f.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (eval.restarts < 1) throw ConfigError("config: eval.restarts must be >= 1");
    if (diag.lambda_iterations < 1) throw ConfigError("config: diag.lambda_iterations must be >= 1");
    if (diag.lambda_samples_per_epoch < 1)
        throw ConfigError("config: diag.lambda_samples_per_epoch must be >= 1");
    for (double rho : diag.rho_grid)
        if (rho < 0.0) throw ConfigError("config: diag.rho_grid entries must be >= 0");
    if (diag.lossdiff_steps < 1 || diag.lossdiff_restarts < 1)
        throw ConfigError("config: diag.lossdiff_steps/restarts must be >= 1");
    if (diag.batch < 1) throw ConfigError("config: diag.batch must be >= 1");
    for (double g : gamma_grid)
        if (g <= 0.0) throw ConfigError("config: sweep.gamma_grid entries must be > 0");
}

std::string RunConfig::to_text() const {
    std::ostringstream out;
    auto line = [&](const std::string& key, const std::string& value) {
        out << key << " = " << value << "\n";
    };
    auto dlist = [&](const std::vector<double>& v) {
        std::string s;
        for (size_t i = 0; i < v.size(); ++i) {
            if (i) s += ",";
            s += fmt_double(v[i]);
        }
        return s;
    };

    line("data.kind", data.kind);
    line("data.n", std::to_string(data.n));
    line("data.noise", fmt_double(data.noise));
    if (!data.train_images.empty()) line("data.train_images", data.train_images);
    if (!data.train_labels.empty()) line("data.train_labels", data.train_labels);
    if (!data.test_images.empty()) line("data.test_images", data.test_images);
    if (!data.test_labels.empty()) line("data.test_labels", data.test_labels);
    {
        std::string s;
        for (size_t i = 0; i < model.layers.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(model.layers[i]);
        }
        line("model.layers", s);
    }
    line("model.rank", model.rank == RankRule::magnitude ? "magnitude" : "signed");
    line("model.exempt_boundary", model.exempt_boundary ? "true" : "false");
    line("train.batch", std::to_string(batch_size));
    line("pretrain.epochs", std::to_string(pretrain.epochs));
    line("pretrain.eta", fmt_double(pretrain.eta));
    line("pretrain.step_decay", pretrain.step_decay ? "true" : "false");
    line("loss.kind", loss_kind_name(loss.kind));
    line("loss.beta", fmt_double(loss.beta));
    line("attack.epsilon", fmt_double(attack.epsilon));
    line("attack.alpha", fmt_double(attack.alpha));
    line("attack.steps", std::to_string(attack.steps));
    line("attack.random_start", attack.random_start ? "true" : "false");
    line("attack.clamp_lo", fmt_double(attack.clamp_lo));
    line("attack.clamp_hi", fmt_double(attack.clamp_hi));
    line("eval.epsilon", fmt_double(eval.attack.epsilon));
    line("eval.alpha", fmt_double(eval.attack.alpha));
    line("eval.steps", std::to_string(eval.attack.steps));
    line("eval.restarts", std::to_string(eval.restarts));
    line("prune.sparsity", fmt_double(prune.sparsity));
    line("prune.gamma", fmt_double(prune.gamma));
    line("prune.eta", fmt_double(prune.eta));
    line("prune.epochs", std::to_string(prune.epochs));
    line("prune.warmup_epochs", std::to_string(prune.warmup_epochs));
    line("prune.mode", prune_mode_name(prune.mode));
    line("prune.best_tracking",
         prune.best_tracking == BestTracking::epoch ? "epoch" : "iteration");
    line("prune.rlth", prune.rlth ? "true" : "false");
    line("finetune.mode", finetune.mode == FinetuneMode::standard ? "standard" : "s2ap_awp");
    line("finetune.epochs", std::to_string(finetune.epochs));
    line("finetune.eta", fmt_double(finetune.eta));
    line("finetune.gamma", fmt_double(finetune.gamma));
    line("finetune.step_decay", finetune.step_decay ? "true" : "false");
    line("diag.enabled", diag.enabled ? "true" : "false");
    line("diag.lambda_iterations", std::to_string(diag.lambda_iterations));
    line("diag.lambda_samples_per_epoch", std::to_string(diag.lambda_samples_per_epoch));
    line("diag.rho_grid", dlist(diag.rho_grid));
    line("diag.lossdiff_steps", std::to_string(diag.lossdiff_steps));
    line("diag.lossdiff_restarts", std::to_string(diag.lossdiff_restarts));
    line("diag.batch", std::to_string(diag.batch));
    {
        std::string s;
        for (size_t i = 0; i < seeds.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(seeds[i]);
        }
        line("run.seeds", s);
    }
    line("run.out", out_dir);
    line("sweep.gamma_grid", dlist(gamma_grid));
    return out.str();
}

PruneConfig RunConfig::prune_for_seed(uint64_t seed) const {
    PruneConfig p = prune;
    p.loss = loss;
    p.rank = model.rank;
    p.batch_size = batch_size;
    p.seed = seed;
    return p;
}

FinetuneConfig RunConfig::finetune_for_seed(uint64_t seed) const {
    FinetuneConfig f = finetune;
    f.loss = loss;
    f.batch_size = batch_size;
    f.seed = seed;
    return f;
}

}  // namespace s2ap
