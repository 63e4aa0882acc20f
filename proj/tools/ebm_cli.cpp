// ebm: train, sample, analyze and denoise with energy-based image models.

#include "ebm/ebm.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <thread>

namespace fs = std::filesystem;
using namespace ebm;

namespace {

// ---------------------------------------------------------------------------
// Configuration keys
// ---------------------------------------------------------------------------

enum class Kind { Int, Num, Flag, Str, NumList };

struct KeySpec {
    const char* key;
    const char* def;
    Kind kind;
    double lo;            // inclusive lower bound for Int/Num/NumList entries
    const char* choices;  // '|' separated, Str keys only
};

constexpr double kAny = -std::numeric_limits<double>::infinity();

const std::vector<KeySpec>& key_table() {
    static const std::vector<KeySpec> keys = {
        {"recipe", "pot-natural", Kind::Str, 0,
         "bss|toy2d|pot-natural|pot-stereo|pot-topo|bm-1d|bm-2d|denoise-bench|feature-extract"},
        {"seed", "1", Kind::Int, 0, nullptr},

        {"data.dir", "", Kind::Str, 0, nullptr},
        {"data.images", "camera,astronaut,chelsea,coffee,rocket", Kind::Str, 0, nullptr},
        {"data.downsample", "1", Kind::Int, 1, nullptr},
        {"data.patch_size", "9", Kind::Int, 2, nullptr},
        {"data.patches", "40000", Kind::Int, 1, nullptr},
        {"data.keep", "64", Kind::Int, 1, nullptr},
        {"data.log", "1", Kind::Flag, 0, nullptr},
        {"data.whiten", "pca", Kind::Str, 0, "pca|zca"},
        {"data.stereo_shift_sd", "2", Kind::Num, 0, nullptr},

        {"model.features", "0", Kind::Int, 0, nullptr},
        {"model.init_sd", "0.1", Kind::Num, 0, nullptr},
        {"model.alpha", "1.5", Kind::Num, 1e-12, nullptr},
        {"model.norm", "0", Kind::Num, 0, nullptr},
        {"model.grid_rows", "8", Kind::Int, 1, nullptr},
        {"model.grid_cols", "8", Kind::Int, 1, nullptr},
        {"model.window", "3", Kind::Int, 1, nullptr},
        {"model.exact_sampling", "0", Kind::Flag, 0, nullptr},
        {"model.sigmoid_units", "20", Kind::Int, 1, nullptr},

        {"train.estimator", "cd", Kind::Str, 0, "cd|exact|variational"},
        {"train.epochs", "1", Kind::Int, 0, nullptr},
        {"train.iterations", "0", Kind::Int, 0, nullptr},
        {"train.batch", "100", Kind::Int, 1, nullptr},
        {"train.lr", "0.01", Kind::Num, 0, nullptr},
        {"train.momentum", "0.9", Kind::Num, 0, nullptr},
        {"train.weight_decay", "0", Kind::Num, 0, nullptr},
        {"train.cd_steps", "1", Kind::Int, 0, nullptr},
        {"train.anneal", "1", Kind::Flag, 0, nullptr},
        {"train.stepwise", "", Kind::NumList, 0, nullptr},
        {"train.alpha_rate", "0", Kind::Num, 0, nullptr},
        {"train.norm_rate", "0.01", Kind::Num, 0, nullptr},
        {"train.use_hmc", "0", Kind::Flag, 0, nullptr},
        {"train.checkpoint_every", "0", Kind::Int, 0, nullptr},
        {"train.record_every", "100", Kind::Int, 1, nullptr},

        {"hmc.leapfrog", "30", Kind::Int, 1, nullptr},
        {"hmc.step", "0.1", Kind::Num, 1e-12, nullptr},
        {"hmc.accept_lo", "0.9", Kind::Num, 0, nullptr},
        {"hmc.accept_hi", "0.95", Kind::Num, 0, nullptr},

        {"bss.sources", "5", Kind::Int, 2, nullptr},
        {"bss.samples", "20000", Kind::Int, 2, nullptr},
        {"toy.points", "3000", Kind::Int, 3, nullptr},

        {"bm.side", "51", Kind::Int, 3, nullptr},
        {"bm.patterns", "20000", Kind::Int, 1, nullptr},
        {"bm.shift_sd", "15", Kind::Num, 0, nullptr},
        {"bm.sigma0", "30", Kind::Num, 1e-12, nullptr},
        {"bm.s0", "0.1", Kind::Num, 0, nullptr},
        {"bm.init_noise", "0.01", Kind::Num, 0, nullptr},
        {"bm.dog_sigma1", "4.77", Kind::Num, 1e-12, nullptr},
        {"bm.dog_sigma2", "4.66", Kind::Num, 1e-12, nullptr},
        {"bm.dog_sm", "0.25", Kind::Num, 0, nullptr},
        {"bm.learn_K", "0", Kind::Flag, 0, nullptr},
        {"bm.deprivation", "1", Kind::Num, 1e-12, nullptr},
        {"bm.deprived_eye", "0", Kind::Int, 0, nullptr},
        {"bm.mf_steps", "1", Kind::Int, 1, nullptr},

        {"denoise.levels", "18,12,8.5,6", Kind::NumList, kAny, nullptr},
        {"denoise.stride", "2", Kind::Int, 0, nullptr},
        {"denoise.crop", "256", Kind::Int, 8, nullptr},
        {"denoise.windows", "3,5,7,9,11,15", Kind::NumList, 1, nullptr},
        {"denoise.tol", "1e-4", Kind::Num, 0, nullptr},
        {"denoise.noise_seed", "100", Kind::Int, 0, nullptr},

        {"sample.steps", "100000", Kind::Int, 0, nullptr},
        {"sample.t_start", "10", Kind::Num, 1, nullptr},
        {"sample.levels", "50", Kind::Int, 1, nullptr},

        {"analyze.shuffles", "200", Kind::Int, 1, nullptr},
    };
    return keys;
}

using Overrides = std::map<std::string, std::string>;

const std::map<std::string, Overrides>& recipe_table() {
    static const std::map<std::string, Overrides> recipes = {
        {"bss",
         {{"train.use_hmc", "1"}, {"train.iterations", "10000"}, {"train.anneal", "0"},
          {"train.stepwise", "0.05,0.025,0.005,0.0025,0.0005"}, {"train.record_every", "1000"}}},
        {"toy2d",
         {{"train.use_hmc", "1"}, {"train.epochs", "500"}, {"train.batch", "250"}, {"train.lr", "0.05"},
          {"train.anneal", "0"}, {"train.cd_steps", "5"}, {"hmc.leapfrog", "10"}, {"hmc.accept_lo", "0.6"},
          {"hmc.accept_hi", "0.8"}, {"sample.steps", "10000"}, {"sample.t_start", "1"}, {"sample.levels", "1"}}},
        {"pot-natural",
         {{"data.patch_size", "25"}, {"data.keep", "361"}, {"data.patches", "150000"}, {"train.epochs", "200"}}},
        {"pot-stereo",
         {{"data.patch_size", "16"}, {"data.keep", "256"}, {"data.patches", "150000"}, {"model.features", "435"},
          {"model.norm", "1"}, {"train.epochs", "200"}}},
        {"pot-topo",
         {{"data.downsample", "2"}, {"data.patch_size", "12"}, {"data.keep", "40"}, {"model.norm", "1"},
          {"train.iterations", "30000"}}},
        {"bm-1d", {{"train.estimator", "variational"}, {"train.lr", "0.005"}, {"train.iterations", "2000"}}},
        {"bm-2d",
         {{"train.estimator", "variational"}, {"train.lr", "0.005"}, {"train.iterations", "2000"}, {"bm.side", "39"},
          {"bm.shift_sd", "5"}, {"bm.dog_sigma1", "12"}, {"bm.dog_sigma2", "11"}, {"bm.dog_sm", "0.05"}}},
        {"denoise-bench",
         {{"data.patch_size", "8"}, {"data.keep", "63"}, {"data.log", "0"}, {"train.iterations", "20000"}}},
        {"feature-extract", {{"train.iterations", "20000"}}},
    };
    return recipes;
}

// Applied last under --smoke: small counts, same code paths.
Overrides smoke_overrides(const std::string& recipe) {
    Overrides o = {{"data.patches", "1500"}, {"train.iterations", "30"}, {"train.record_every", "10"},
                   {"train.checkpoint_every", "15"}, {"train.batch", "50"}, {"bss.samples", "1000"},
                   {"toy.points", "300"}, {"bm.patterns", "300"}, {"denoise.crop", "40"}, {"denoise.levels", "12,6"},
                   {"denoise.windows", "3,5"}, {"sample.steps", "20"}, {"sample.levels", "4"},
                   {"analyze.shuffles", "10"}};
    const std::map<std::string, Overrides> per = {
        {"pot-natural", {{"data.patch_size", "6"}, {"data.keep", "20"}}},
        {"feature-extract", {{"data.patch_size", "6"}, {"data.keep", "20"}}},
        {"pot-stereo", {{"data.patch_size", "6"}, {"data.keep", "30"}, {"model.features", "40"}}},
        {"pot-topo",
         {{"data.patch_size", "8"}, {"data.keep", "16"}, {"model.grid_rows", "4"}, {"model.grid_cols", "4"}}},
        {"denoise-bench", {{"data.patch_size", "4"}, {"data.keep", "15"}}},
        {"bm-1d", {{"bm.side", "15"}, {"bm.shift_sd", "3"}, {"bm.dog_sigma1", "2"}, {"bm.dog_sigma2", "1.9"}}},
        {"bm-2d", {{"bm.side", "7"}, {"bm.shift_sd", "1"}, {"bm.dog_sigma1", "2"}, {"bm.dog_sigma2", "1.9"}}},
    };
    if (auto it = per.find(recipe); it != per.end()) {
        for (const auto& [k, v] : it->second) {
            o[k] = v;
        }
    }
    return o;
}

std::vector<double> num_list(const Config& c, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(c.str(key, ""));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) {
            out.push_back(parse_double(tok));
        }
    }
    return out;
}

std::vector<std::string> str_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) {
            out.push_back(tok);
        }
    }
    return out;
}

// Collects every problem before reporting, so one run shows all bad fields.
void validate(const Config& c) {
    std::vector<std::string> problems;
    std::set<std::string> known;
    for (const KeySpec& k : key_table()) {
        known.insert(k.key);
        if (!c.has(k.key)) {
            continue;
        }
        const std::string v = c.str(k.key, "");
        try {
            double x = 0;
            switch (k.kind) {
            case Kind::Int:
                x = double(c.integer(k.key, 0));
                break;
            case Kind::Num:
                x = c.num(k.key, 0);
                break;
            case Kind::Flag:
                c.flag(k.key, false);
                continue;
            case Kind::Str:
                if (k.choices) {
                    std::string opts = k.choices;
                    std::replace(opts.begin(), opts.end(), '|', ',');
                    const auto list = str_list(opts);
                    if (std::find(list.begin(), list.end(), v) == list.end()) {
                        problems.push_back(std::string(k.key) + ": '" + v + "' is not one of " + k.choices);
                    }
                }
                continue;
            case Kind::NumList:
                for (double e : num_list(c, k.key)) {
                    if (e < k.lo) {
                        problems.push_back(std::string(k.key) + ": entry " + format_double(e) + " is below " +
                                           format_double(k.lo));
                    }
                }
                continue;
            }
            if (x < k.lo) {
                problems.push_back(std::string(k.key) + ": " + v + " is below " + format_double(k.lo));
            }
        } catch (const Error& e) {
            problems.push_back(std::string(k.key) + ": " + e.what());
        }
    }
    for (const auto& [k, v] : c.values()) {
        if (!known.count(k)) {
            problems.push_back(k + ": unknown key");
        }
    }
    if (problems.empty()) {
        const double lo = c.num("hmc.accept_lo", 0.9), hi = c.num("hmc.accept_hi", 0.95);
        if (!(lo > 0 && lo < hi && hi < 1)) {
            problems.push_back("hmc.accept_lo/accept_hi: need 0 < lo < hi < 1");
        }
        if (c.num("train.momentum", 0) >= 1) {
            problems.push_back("train.momentum: must be < 1");
        }
        if (c.integer("bm.deprived_eye", 0) > 2) {
            problems.push_back("bm.deprived_eye: must be 0, 1 or 2");
        }
        if (c.num("bm.deprivation", 1) > 1) {
            problems.push_back("bm.deprivation: must be <= 1");
        }
        if (c.num("bm.dog_sigma1", 1) == c.num("bm.dog_sigma2", 2)) {
            problems.push_back("bm.dog_sigma1/dog_sigma2: widths must differ");
        }
    }
    if (!problems.empty()) {
        std::string msg = "invalid configuration (" + std::to_string(problems.size()) + " problem" +
                          (problems.size() > 1 ? "s" : "") + "):";
        for (const auto& p : problems) {
            msg += "\n  " + p;
        }
        throw Error(msg);
    }
}

struct ConfigSources {
    std::string recipe;
    std::string file;
    std::vector<std::string> sets;
    bool smoke = false;
};

// Precedence, lowest first: defaults, recipe, config file, EBM_* environment, --set, --smoke.
Config build_config(const ConfigSources& src) {
    Config c;
    for (const KeySpec& k : key_table()) {
        c.set(k.key, k.def);
    }
    Config file;
    if (!src.file.empty()) {
        file = Config::load(src.file);
    }
    std::string recipe = src.recipe.empty() ? file.str("recipe", c.str("recipe", "")) : src.recipe;
    if (!recipe_table().count(recipe)) {
        throw Error("unknown recipe '" + recipe + "'");
    }
    c.set("recipe", recipe);
    for (const auto& [k, v] : recipe_table().at(recipe)) {
        c.set(k, v);
    }
    for (const auto& [k, v] : file.values()) {
        if (k != "recipe") {
            c.set(k, v);
        }
    }
    std::vector<std::string> keys;
    for (const KeySpec& k : key_table()) {
        if (std::string(k.key) != "recipe") {
            keys.emplace_back(k.key);
        }
    }
    c.apply_env(keys);
    for (const auto& kv : src.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw Error("--set expects key=value, got '" + kv + "'");
        }
        c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (src.smoke) {
        for (const auto& [k, v] : smoke_overrides(recipe)) {
            c.set(k, v);
        }
    }
    validate(c);
    return c;
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

std::uint64_t master_seed(const Config& c) { return static_cast<std::uint64_t>(c.integer("seed", 1)); }

HmcConfig hmc_from(const Config& c) {
    HmcConfig h;
    h.leapfrog_steps = int(c.integer("hmc.leapfrog", 30));
    h.step_size = c.num("hmc.step", 0.1);
    h.accept_lo = c.num("hmc.accept_lo", 0.9);
    h.accept_hi = c.num("hmc.accept_hi", 0.95);
    return h;
}

TrainSchedule schedule_from(const Config& c, Index rows) {
    TrainSchedule s;
    s.batch_size = c.integer("train.batch", 100);
    s.epochs = int(c.integer("train.epochs", 1));
    s.max_iterations = c.integer("train.iterations", 0);
    s.learning_rate = c.num("train.lr", 0.01);
    s.momentum = c.num("train.momentum", 0.9);
    s.weight_decay = c.num("train.weight_decay", 0);
    s.cd_steps = int(c.integer("train.cd_steps", 1));
    s.use_hmc = c.flag("train.use_hmc", false);
    s.record_every = c.integer("train.record_every", 100);
    s.group_scale["alpha"] = c.num("train.alpha_rate", 0);
    s.group_scale["norm"] = c.num("train.norm_rate", 0.01);
    const Index per_epoch = std::max<Index>(rows / std::min(s.batch_size, rows), 1);
    if (s.max_iterations > 0 && s.epochs > 0) {
        s.epochs = int(std::max<Index>(s.epochs, (s.max_iterations + per_epoch - 1) / per_epoch));
    }
    const Index total = s.max_iterations > 0 ? s.max_iterations : Index(s.epochs) * per_epoch;
    const std::vector<double> steps = num_list(c, "train.stepwise");
    if (!steps.empty()) {
        s.anneal = TrainSchedule::stepwise(steps, std::max<Index>(total / Index(steps.size()), 1));
    } else if (c.flag("train.anneal", true)) {
        const double lr = s.learning_rate;
        s.anneal = {{0, lr}, {total / 2, lr / 4}, {3 * total / 4, lr / 20}};
    }
    return s;
}

std::vector<Image> load_corpus(const Config& c) {
    std::string dir = c.str("data.dir", "");
    if (dir.empty()) {
        dir = std::string(EBM_DATA_DIR) + "/images";
    }
    const Index factor = c.integer("data.downsample", 1);
    std::vector<Image> out;
    for (const auto& name : str_list(c.str("data.images", ""))) {
        const bool is_path = name.find('/') != std::string::npos || name.ends_with(".pgm");
        Image im = read_pgm(is_path ? name : dir + "/" + name + ".pgm");
        out.push_back(factor > 1 ? downsample(im, factor) : im);
    }
    if (out.empty()) {
        throw Error("data.images lists no images");
    }
    return out;
}

// Whitened training patches plus what is needed to map back to pixels.
struct PatchData {
    Mat X;
    WhiteningTransform whitener;
    Vec pixel_mean;
    Index side = 0;
    Index eyes = 1;
};

Container preprocess_container(const PatchData& d, bool log) {
    Container c;
    c.family = "preprocess";
    c.set("log", log ? "1" : "0");
    c.set("side", std::to_string(d.side));
    c.set("eyes", std::to_string(d.eyes));
    c.put("pixel_mean", Mat(d.pixel_mean));
    return c;
}

PatchData make_patch_data(const Config& c, bool stereo) {
    const auto images = load_corpus(c);
    const Index side = c.integer("data.patch_size", 9);
    const Index count = c.integer("data.patches", 40000);
    const bool log = c.flag("data.log", true);
    const std::uint64_t seed = stream_seed(master_seed(c), "patches");
    PatchData d;
    d.side = side;
    PatchBatch pb;
    if (stereo) {
        pb = make_stereo_pairs(images, side, c.num("data.stereo_shift_sd", 2), count, seed);
        d.pixel_mean = preprocess_stereo_inplace(pb, log);
        d.eyes = 2;
    } else {
        pb = extract_patches(images, side, count, seed);
        d.pixel_mean = preprocess_inplace(pb, log);
    }
    const WhitenMode mode = c.str("data.whiten", "pca") == "zca" ? WhitenMode::ZCA : WhitenMode::PCA;
    d.whitener = fit_whitener(pb.data, c.integer("data.keep", 64), mode);
    d.X = apply_whitener(d.whitener, pb.data);
    return d;
}

void write_patch_outputs(const fs::path& out, const PatchData& d, const Config& c) {
    save_container((out / "whitener.ebm").string(), to_container(d.whitener));
    save_container((out / "preprocess.ebm").string(), preprocess_container(d, c.flag("data.log", true)));
}

Container matrix_container(const std::string& family, const Mat& data, const Overrides& meta = {}) {
    Container c;
    c.family = family;
    for (const auto& [k, v] : meta) {
        c.set(k, v);
    }
    c.put("data", data);
    return c;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p);
    if (!f) {
        throw Error("cannot write " + p.string());
    }
    f.precision(10);
    return f;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

template <class M>
M run_training(const M& init, const Mat& data, const Config& c, const fs::path& out,
               GradientEstimator<M> estimator = {}) {
    const TrainSchedule s = schedule_from(c, data.rows());
    if (!estimator) {
        const std::string kind = c.str("train.estimator", "cd");
        if (kind == "exact") {
            if constexpr (requires(const M& m) { m.exact_model_expectation(); }) {
                estimator = exact_estimator<M>();
            } else {
                throw Error("train.estimator=exact is not available for this model family");
            }
        } else if (kind == "variational") {
            if constexpr (requires(const M& m, const Mat& b) { m.cd_direction(b, 1); }) {
                estimator = variational_estimator<M>(int(c.integer("bm.mf_steps", 1)));
            } else {
                throw Error("train.estimator=variational needs a Boltzmann model");
            }
        } else {
            estimator = cd_estimator<M>(s, stream_seed(master_seed(c), "cd"));
        }
    }
    save_container((out / "init.ebm").string(), to_container(init));
    TrainOptions opt;
    opt.hmc = hmc_from(c);
    opt.seed = stream_seed(master_seed(c), "train");
    const Index every = c.integer("train.checkpoint_every", 0);
    if (every > 0) {
        opt.on_update = [&, every, proto = init](Index it, const Vec& params) mutable {
            if ((it + 1) % every == 0) {
                proto.set_params(params);
                save_container((out / ("checkpoint-" + std::to_string(it + 1) + ".ebm")).string(),
                               to_container(proto));
            }
        };
    }
    const auto res = train(init, data, s, estimator, opt);
    res.history.write_csv((out / "history.csv").string());
    save_container((out / "model.ebm").string(), to_container(res.model));
    std::cout << "trained " << res.history.records.size() << " recorded updates; final hmc step "
              << res.hmc.step_size << "\n";
    return res.model;
}

void train_bss(const Config& c, const fs::path& out) {
    const Index S = c.integer("bss.sources", 5), n = c.integer("bss.samples", 20000);
    Rng rng = make_rng(master_seed(c), "bss-sources");
    Mat src(n, S);
    std::exponential_distribution<double> ex(1.0);
    std::bernoulli_distribution coin(0.5);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < S; ++j) {
            src(i, j) = (coin(rng) ? 1 : -1) * ex(rng);
        }
    }
    Rng mix = make_rng(master_seed(c), "bss-mixing");
    const Mat A = randn(S, S, mix);
    const Mat X = src * A.transpose();
    const WhiteningTransform w = fit_whitener(X, S, WhitenMode::PCA);
    const Mat Xw = apply_whitener(w, X);
    const Mat truth = A.inverse() * w.inverse;
    save_container((out / "whitener.ebm").string(), to_container(w));
    save_container((out / "mixing.ebm").string(), matrix_container("matrix", A));
    Rng init = make_rng(master_seed(c), "init");
    const SigmoidNet m0 = SigmoidNet::random(S, S, c.num("model.init_sd", 0.1), init, SigmoidEnergy::Logistic);
    const SigmoidNet m = run_training(m0, Xw, c, out);
    auto f = open_out(out / "report.csv");
    f << "metric,value\namari_init," << amari_distance(m0.parameters().J, truth) << "\namari_final,"
      << amari_distance(m.parameters().J, truth) << "\n";
}

void train_toy2d(const Config& c, const fs::path& out) {
    const Index n = c.integer("toy.points", 3000);
    // Three axis-aligned Gaussians, equal shares.
    const double mean[3][2] = {{4, 4}, {-3, 2}, {-3, 2}};
    const double var[3][2] = {{1.5, 0.5}, {4, 0.1}, {1.1, 4}};
    Rng rng = make_rng(master_seed(c), "toy-data");
    std::normal_distribution<double> nd(0, 1);
    Mat X(n, 2);
    for (Index i = 0; i < n; ++i) {
        const Index k = i * 3 / n;
        X(i, 0) = mean[k][0] + std::sqrt(var[k][0]) * nd(rng);
        X(i, 1) = mean[k][1] + std::sqrt(var[k][1]) * nd(rng);
    }
    save_container((out / "data.ebm").string(), matrix_container("samples", X, {{"mode", "data"}}));
    Rng init = make_rng(master_seed(c), "init");
    run_training(SigmoidNet::random(c.integer("model.sigmoid_units", 20), 2, c.num("model.init_sd", 0.1), init,
                                    SigmoidEnergy::Weighted),
                 X, c, out);
}

PotModel initial_pot(const Config& c, Index inputs, bool topographic) {
    Rng rng = make_rng(master_seed(c), "init");
    const double sd = c.num("model.init_sd", 0.1), alpha = c.num("model.alpha", 1.5);
    PotParams p;
    if (topographic) {
        const int w = int(c.integer("model.window", 3));
        p = make_topographic_pot(c.integer("model.grid_rows", 8), c.integer("model.grid_cols", 8), inputs,
                                 Neighborhood::square(w), sd, rng, alpha)
                .parameters();
    } else {
        const Index f = c.integer("model.features", 0);
        p = PotModel::random(f > 0 ? f : inputs, inputs, sd, rng, alpha).parameters();
    }
    if (const double l = c.num("model.norm", 0); l > 0) {
        p.norm_constrained = true;
        p.norm = l;
    }
    p.exact_sampling = c.flag("model.exact_sampling", false);
    return PotModel(std::move(p));
}

void train_pot(const Config& c, const fs::path& out, bool stereo, bool topographic) {
    const PatchData d = make_patch_data(c, stereo);
    write_patch_outputs(out, d, c);
    run_training(initial_pot(c, d.X.cols(), topographic), d.X, c, out);
}

void train_feature_extract(const Config& c, const fs::path& out) {
    const PatchData d = make_patch_data(c, false);
    write_patch_outputs(out, d, c);
    const PotModel m = run_training(initial_pot(c, d.X.cols(), false), d.X, c, out);
    Mat F(d.X.rows(), m.parameters().top_units());
    parallel_for(d.X.rows(), [&](Index r) { F.row(r) = m.divisive_normalize(d.X.row(r).transpose()).transpose(); });
    save_container((out / "features.ebm").string(),
                   matrix_container("features", F, {{"transform", "divisive-normalization"}}));
}

void write_ocularity(const BmParams& p, Index rows, Index cols, const fs::path& out) {
    const Vec oc = bm_ocularity(p);
    auto f = open_out(out / "ocularity.csv");
    f << "unit,row,col,ocularity\n";
    for (Index i = 0; i < oc.size(); ++i) {
        f << i << ',' << i / cols << ',' << i % cols << ',' << oc[i] << '\n';
    }
    Mat img(rows, cols);
    for (Index i = 0; i < oc.size(); ++i) {
        img(i / cols, i % cols) = oc[i];
    }
    write_pgm((out / "ocularity.pgm").string(), to_display(img));
    const std::vector<double> v(oc.data(), oc.data() + oc.size());
    const DipTest dip = dip_test(v, 500, stream_seed(0, "dip"));
    auto r = open_out(out / "report.csv");
    r << "metric,value\nsign_changes," << (rows == 1 ? sign_changes(oc, true) : -1) << "\nmean_band_width,"
      << (rows == 1 ? mean_band_width(oc) : -1.0) << "\ndip," << dip.dip << "\ndip_p," << dip.p_value << "\n";
}

void train_bm(const Config& c, const fs::path& out, bool two_d) {
    const Index side = c.integer("bm.side", 51);
    const Lattice lat = two_d ? Lattice::grid(side) : Lattice::ring(side);
    StereoInputConfig sc;
    sc.eye = lat;
    sc.shift_sd = c.num("bm.shift_sd", 15);
    sc.deprivation = c.num("bm.deprivation", 1);
    sc.deprived_eye = int(c.integer("bm.deprived_eye", 0));
    const StereoBatch sb = gen_stereo_patterns(sc, c.integer("bm.patterns", 20000), stream_seed(master_seed(c), "stereo"));
    const Mat data = sb.stacked();
    Rng rng = make_rng(master_seed(c), "init");
    const Index n = lat.size();
    const Mat JL = init_retinotopic_weights(lat, lat, c.num("bm.sigma0", 30), c.num("bm.s0", 0.1), 0, rng);
    const double noise = c.num("bm.init_noise", 0.01);
    BmParams p = BmParams::zeros(2 * n, n);
    p.J.topRows(n) = JL + randn(n, n, rng, noise);
    p.J.bottomRows(n) = JL + randn(n, n, rng, noise);
    p.K = dog_lateral_weights(lat, c.num("bm.dog_sigma1", 4.77), c.num("bm.dog_sigma2", 4.66), c.num("bm.dog_sm", 0.25));
    p.nonneg_J = true;
    save_container((out / "data.ebm").string(), matrix_container("samples", data, {{"mode", "data"}}));
    const BoltzmannModel m = run_training(BoltzmannModel(p, c.flag("bm.learn_K", false)), data, c, out);
    write_ocularity(m.parameters(), lat.rows, lat.cols, out);
}

struct BenchRow {
    std::string image;
    double db, sd, noisy, wiener, iwf;
    Index window;
};

std::vector<BenchRow> denoise_benchmark(const DenoiseJob& job, const std::vector<Image>& images,
                                        const std::vector<std::string>& names, const Config& c) {
    const Index crop = c.integer("denoise.crop", 256);
    std::vector<Index> windows;
    for (double w : num_list(c, "denoise.windows")) {
        windows.push_back(Index(w));
    }
    std::vector<BenchRow> rows;
    for (double db : num_list(c, "denoise.levels")) {
        const double sd = noise_std_for_psnr(db);
        for (std::size_t k = 0; k < images.size(); ++k) {
            const Mat& full = images[k].pixels;
            const Index h = std::min(crop, full.rows()), w = std::min(crop, full.cols());
            const Mat clean = full.block((full.rows() - h) / 2, (full.cols() - w) / 2, h, w);
            const Mat noisy = add_noise(clean, sd, std::uint64_t(c.integer("denoise.noise_seed", 100)) + k);
            const WienerChoice wb = wiener_best(clean, noisy, sd, windows);
            rows.push_back({names[k], db, sd, psnr(clean, noisy, 255), wb.psnr,
                            psnr(clean, iwf_image(job, noisy, sd), 255), wb.window});
        }
    }
    return rows;
}

void write_bench(const std::vector<BenchRow>& rows, const fs::path& path) {
    auto f = open_out(path);
    f << "image,noise_db,noise_std,noisy_psnr,wiener_window,wiener_psnr,iwf_psnr\n";
    std::map<double, std::array<double, 4>> mean;
    for (const auto& r : rows) {
        f << r.image << ',' << r.db << ',' << r.sd << ',' << r.noisy << ',' << r.window << ',' << r.wiener << ','
          << r.iwf << '\n';
        auto& m = mean[r.db];
        m[0] += r.noisy;
        m[1] += r.wiener;
        m[2] += r.iwf;
        m[3] += 1;
    }
    for (auto it = mean.rbegin(); it != mean.rend(); ++it) {
        const auto& m = it->second;
        f << "mean," << it->first << ',' << noise_std_for_psnr(it->first) << ',' << m[0] / m[3] << ",," << m[1] / m[3]
          << ',' << m[2] / m[3] << '\n';
    }
}

void train_denoise_bench(const Config& c, const fs::path& out) {
    const PatchData d = make_patch_data(c, false);
    write_patch_outputs(out, d, c);
    const PotModel prior = run_training(initial_pot(c, d.X.cols(), false), d.X, c, out);
    DenoiseJob job{prior, d.whitener, d.pixel_mean, d.side, {}, c.integer("denoise.stride", 2)};
    job.iwf.tol = c.num("denoise.tol", 1e-4);
    write_bench(denoise_benchmark(job, load_corpus(c), str_list(c.str("data.images", "")), c), out / "denoise.csv");
}

int cmd_train(const Config& c, const fs::path& out) {
    fs::create_directories(out);
    {
        auto f = open_out(out / "config.ini");
        c.dump(f);
    }
    const std::string r = c.str("recipe", "");
    if (r == "bss") {
        train_bss(c, out);
    } else if (r == "toy2d") {
        train_toy2d(c, out);
    } else if (r == "pot-natural") {
        train_pot(c, out, false, false);
    } else if (r == "pot-stereo") {
        train_pot(c, out, true, false);
    } else if (r == "pot-topo") {
        train_pot(c, out, false, true);
    } else if (r == "bm-1d" || r == "bm-2d") {
        train_bm(c, out, r == "bm-2d");
    } else if (r == "denoise-bench") {
        train_denoise_bench(c, out);
    } else {
        train_feature_extract(c, out);
    }
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

Mat load_rows(const std::string& path) {
    const Container c = load_container(path);
    if (c.has_block("data")) {
        return c.block("data");
    }
    throw Error(path + ": no 'data' block (family " + c.family + ")");
}

Mat cycle_rows(const Mat& src, Index count) {
    Mat out(count, src.cols());
    for (Index r = 0; r < count; ++r) {
        out.row(r) = src.row(r % src.rows());
    }
    return out;
}

// Gibbs chains over the whole machine at temperature T (couplings divided by T).
Mat bm_chains(const BmParams& p, const Mat& V0, const std::vector<double>& temps, const std::vector<int>& per,
              std::uint64_t seed) {
    const Index nv = p.n_v(), nh = p.n_h();
    Mat out(V0.rows(), nv);
    parallel_for(V0.rows(), [&](Index r) {
        Rng rng = make_rng(seed, "bm-chain", static_cast<std::uint64_t>(r));
        Vec x = Vec::Zero(nv + nh);
        x.head(nv) = V0.row(r).transpose();
        for (std::size_t k = 0; k < temps.size(); ++k) {
            if (per[k] == 0) {
                continue;
            }
            BmParams q = p;
            q.J /= temps[k];
            q.K /= temps[k];
            q.b_v /= temps[k];
            q.b_h /= temps[k];
            q.nonneg_J = false;
            x = gibbs_bm(q, x, per[k], {}, rng).bottomRows(1).transpose();
        }
        out.row(r) = x.head(nv).transpose();
    });
    return out;
}

template <class M>
Mat sample_model(const M& m, const Mat& init, const std::string& mode, const Config& c, std::uint64_t seed) {
    const HmcConfig hmc = hmc_from(c);
    if (mode == "cd-negative") {
        return run_cd_negative_phase(m, init, int(c.integer("train.cd_steps", 1)), hmc, seed,
                                     c.flag("train.use_hmc", false))
            .samples;
    }
    const auto temps = geometric_schedule(c.num("sample.t_start", 10), int(c.integer("sample.levels", 50)));
    return annealed_sample(m, init, int(c.integer("sample.steps", 100000)), temps, seed, hmc);
}

int cmd_sample(const Config& c, const std::string& model_path, const std::string& data_path, Index count,
               const std::string& mode, std::uint64_t seed, const fs::path& out) {
    const Container mc = load_container(model_path);
    if (mode == "cd-negative" && data_path.empty()) {
        throw Error("sample --mode cd-negative needs --data to start the chains");
    }
    std::optional<Mat> data;
    if (!data_path.empty()) {
        data = load_rows(data_path);
        if (data->rows() == 0) {
            throw Error(data_path + ": no rows");
        }
    }
    auto init_for = [&](Index dim, bool gaussian) {
        if (data) {
            require_dim(data->cols(), dim, "sample: data dimension");
            return cycle_rows(*data, count);
        }
        Rng rng = make_rng(seed, "sample-init");
        return gaussian ? randn(count, dim, rng) : Mat(Mat::Zero(count, dim));
    };
    Mat S;
    if (mc.family == "sigmoid-net") {
        const SigmoidNet m = sigmoid_net_from(mc);
        S = sample_model(m, init_for(m.state_dim(), true), mode, c, seed);
    } else if (mc.family == "pot") {
        const PotModel m = pot_from(mc);
        S = sample_model(m, init_for(m.state_dim(), false), mode, c, seed);
    } else if (mc.family == "boltzmann") {
        const BoltzmannModel m = boltzmann_from(mc);
        const Mat V0 = init_for(m.state_dim(), false);
        if (mode == "cd-negative") {
            const int n = int(c.integer("train.cd_steps", 1));
            S = bm_chains(m.parameters(), V0, {1.0}, {n}, seed);
        } else {
            const auto temps = geometric_schedule(c.num("sample.t_start", 10), int(c.integer("sample.levels", 50)));
            S = bm_chains(m.parameters(), V0, temps, split_steps(int(c.integer("sample.steps", 100000)), temps.size()),
                          seed);
        }
    } else {
        throw Error("sample: '" + mc.family + "' is not a model family");
    }
    save_container(out.string(), matrix_container("samples", S, {{"mode", mode}, {"seed", std::to_string(seed)}}));
    std::cout << "wrote " << S.rows() << " samples to " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

fs::path sibling(const std::string& model, const std::string& explicit_path, const char* name) {
    if (!explicit_path.empty()) {
        return explicit_path;
    }
    return fs::path(model).parent_path() / name;
}

Index square_side(Index n, const std::string& what) {
    const Index s = Index(std::lround(std::sqrt(double(n))));
    if (s * s != n) {
        throw Error(what + ": " + std::to_string(n) + " pixels is not a square patch; pass a matching --whitener");
    }
    return s;
}

void write_fit_row(std::ostream& f, Index unit, const GaborFit& g) {
    f << unit << ',' << g.good << ',' << g.x0 << ',' << g.y0 << ',' << g.theta << ',' << g.freq << ',' << g.phase
      << ',' << g.sigma_w << ',' << g.sigma_l << ',' << g.n_x() << ',' << g.n_y() << ',' << g.residual << '\n';
}

constexpr const char* kFitHeader = "unit,good,x0,y0,theta,freq,phase,sigma_w,sigma_l,n_x,n_y,residual\n";

void analyze_pot(const PotModel& m, const std::optional<WhiteningTransform>& w, Index eyes, const Config& c,
                 const fs::path& out) {
    const Mat F = w ? filters_in_pixel_space(*w, m.effective_filters()) : m.effective_filters();
    const Index per_eye = F.cols() / eyes;
    const Index side = square_side(per_eye, "analyze");
    const Index units = F.rows();
    const Mat FL = F.leftCols(per_eye);

    std::vector<GaborFit> fits = fit_gabors(FL, side);
    {
        auto f = open_out(out / "units.csv");
        f << kFitHeader;
        for (Index i = 0; i < units; ++i) {
            write_fit_row(f, i, fits[std::size_t(i)]);
        }
    }
    // Mosaic ordered by fitted orientation, unfit units last.
    std::vector<Index> order(static_cast<std::size_t>(units));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        const auto& fa = fits[std::size_t(a)];
        const auto& fb = fits[std::size_t(b)];
        if (fa.good != fb.good) {
            return fa.good;
        }
        return fa.good && fa.theta < fb.theta;
    });
    Mat sorted(units, F.cols());
    for (Index i = 0; i < units; ++i) {
        sorted.row(i) = F.row(order[std::size_t(i)]);
    }
    const Index per_row = Index(std::ceil(std::sqrt(double(units))));
    if (eyes == 1) {
        write_pgm((out / "filters.pgm").string(), filter_mosaic(sorted, side, per_row));
    } else {
        write_pgm((out / "filters_left.pgm").string(), filter_mosaic(sorted.leftCols(per_eye), side, per_row));
        write_pgm((out / "filters_right.pgm").string(), filter_mosaic(sorted.rightCols(per_eye), side, per_row));
    }

    const PotParams& p = m.parameters();
    if (p.grid_rows > 0 && eyes == 1) {
        const MapReport rep = map_report(FL, side, p.grid_rows, p.grid_cols, stream_seed(master_seed(c), "maps"),
                                         int(c.integer("analyze.shuffles", 200)));
        auto f = open_out(out / "maps.csv");
        f << "property,neighbor,shuffled,ratio\n";
        const std::pair<const char*, const ContinuityStat*> stats[] = {
            {"center_x", &rep.c_center_x}, {"center_y", &rep.c_center_y}, {"orientation", &rep.c_orientation},
            {"phase", &rep.c_phase}, {"log_freq", &rep.c_log_freq}};
        for (const auto& [name, s] : stats) {
            f << name << ',' << s->neighbor << ',' << s->shuffled << ',' << s->ratio() << '\n';
        }
        const std::pair<const char*, const Vec*> maps[] = {{"center_x", &rep.center_x}, {"center_y", &rep.center_y},
                                                            {"orientation", &rep.orientation}, {"phase", &rep.phase},
                                                            {"log_freq", &rep.log_freq}};
        for (const auto& [name, v] : maps) {
            Mat img(p.grid_rows, p.grid_cols);
            for (Index i = 0; i < v->size(); ++i) {
                img(i / p.grid_cols, i % p.grid_cols) = rep.valid[std::size_t(i)] ? (*v)[i] : 0.0;
            }
            write_pgm((out / (std::string("map_") + name + ".pgm")).string(), to_display(img));
        }
    }

    if (eyes == 2) {
        const std::vector<GaborFit> right = fit_gabors(F.rightCols(per_eye), side);
        auto f = open_out(out / "stereo.csv");
        f << "unit,ocularity,left_good,right_good,phase_offset,phase_shift,position_shift\n";
        const Vec oc = ocularity(F.leftCols(per_eye), F.rightCols(per_eye));
        for (Index i = 0; i < units; ++i) {
            const auto& l = fits[std::size_t(i)];
            const auto& r = right[std::size_t(i)];
            f << i << ',' << oc[i] << ',' << l.good << ',' << r.good;
            if (l.good && r.good) {
                const Disparity d = disparity_measures(l, r);
                f << ',' << d.phase_offset << ',' << d.phase_shift << ',' << d.position_shift << '\n';
            } else {
                f << ",,,\n";
            }
        }
        return;
    }

    // Tuning curves through the pooled (top-unit) responses when hierarchical.
    const Mat* W = p.hierarchical ? &p.W : nullptr;
    const Index tops = p.top_units();
    const Index grid_n = 19;
    const std::pair<TuningFamily, Vec> families[] = {
        {TuningFamily::Orientation, Vec::LinSpaced(grid_n, 0, kPi)},
        {TuningFamily::Phase, Vec::LinSpaced(grid_n, -kPi, kPi)},
        {TuningFamily::Frequency, Vec::LinSpaced(grid_n, 0.02, 0.5)},
        {TuningFamily::Location, Vec::LinSpaced(grid_n, -double(side) / 2, double(side) / 2)}};
    const char* names[] = {"orientation", "phase", "frequency", "location"};
    auto f = open_out(out / "tuning.csv");
    f << "unit,family,offset,response\n";
    for (Index u = 0; u < tops; ++u) {
        const Grating g = optimal_grating(FL, W, u, side);
        for (int k = 0; k < 4; ++k) {
            const Vec& grid = families[k].second;
            const Vec curve = tuning_curve(FL, W, u, families[k].first, grid, side, g);
            for (Index j = 0; j < grid.size(); ++j) {
                f << u << ',' << names[k] << ',' << grid[j] << ',' << curve[j] << '\n';
            }
        }
    }
}

void analyze_sigmoid(const SigmoidNet& m, const fs::path& out) {
    const auto& p = m.parameters();
    auto f = open_out(out / "units.csv");
    f << "unit,a,b";
    for (Index j = 0; j < p.J.cols(); ++j) {
        f << ",J" << j;
    }
    f << '\n';
    for (Index i = 0; i < p.J.rows(); ++i) {
        f << i << ',' << p.a[i] << ',' << p.b[i];
        for (Index j = 0; j < p.J.cols(); ++j) {
            f << ',' << p.J(i, j);
        }
        f << '\n';
    }
    if (m.state_dim() == 2) {
        // Energy landscape over [-8, 8]^2, rows running down in x2.
        const Index n = 101;
        Mat e(n, n);
        for (Index r = 0; r < n; ++r) {
            for (Index col = 0; col < n; ++col) {
                const Vec x = (Vec(2) << -8 + 16.0 * col / (n - 1), 8 - 16.0 * r / (n - 1)).finished();
                e(r, col) = m.energy(x);
            }
        }
        write_pgm((out / "energy.pgm").string(), to_display(e));
        write_pgm((out / "density.pgm").string(), to_display((-(e.array() - e.minCoeff())).exp().matrix()));
    }
}

int cmd_analyze(const Config& c, const std::string& model_path, const std::string& whitener_path,
                const std::string& pre_path, const std::string& lattice, const fs::path& out) {
    const Container mc = load_container(model_path);
    fs::create_directories(out);
    if (mc.family == "pot") {
        std::optional<WhiteningTransform> w;
        Index eyes = 1;
        const fs::path wp = sibling(model_path, whitener_path, "whitener.ebm");
        if (fs::exists(wp)) {
            w = whitener_from(load_container(wp.string()));
        } else if (!whitener_path.empty()) {
            throw Error("cannot open whitener " + wp.string());
        }
        const fs::path pp = sibling(model_path, pre_path, "preprocess.ebm");
        if (fs::exists(pp)) {
            eyes = std::stoll(load_container(pp.string()).get("eyes", "1"));
        }
        const PotModel m = pot_from(mc);
        if (w) {
            require_dim(w->output_dim(), m.state_dim(), "analyze: whitener output vs model input");
        }
        analyze_pot(m, w, eyes, c, out);
    } else if (mc.family == "boltzmann") {
        const BoltzmannModel m = boltzmann_from(mc);
        const Index n = m.parameters().n_h();
        Index rows = 1;
        if (lattice == "grid") {
            rows = Index(std::lround(std::sqrt(double(n))));
            if (rows * rows != n) {
                throw Error("analyze --lattice grid: " + std::to_string(n) + " hidden units is not a square grid");
            }
        }
        write_ocularity(m.parameters(), rows, n / rows, out);
    } else if (mc.family == "sigmoid-net") {
        analyze_sigmoid(sigmoid_net_from(mc), out);
    } else {
        throw Error("analyze: '" + mc.family + "' is not a model family");
    }
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// denoise
// ---------------------------------------------------------------------------

int cmd_denoise(const Config& c, const std::string& model_path, const std::string& whitener_path,
                const std::string& pre_path, const std::string& image_path, double noise_std, bool sweep,
                std::uint64_t seed, const fs::path& out, const std::string& report) {
    const PotModel prior = pot_from(load_container(model_path));
    const WhiteningTransform w = whitener_from(load_container(sibling(model_path, whitener_path, "whitener.ebm").string()));
    const Container pre = load_container(sibling(model_path, pre_path, "preprocess.ebm").string());
    if (pre.get("log", "0") == "1") {
        throw Error("denoise: the prior was trained on log intensities; retrain with data.log=0");
    }
    DenoiseJob job{prior, w, as_vector(pre.block("pixel_mean")), std::stoll(pre.get("side")), {},
                   c.integer("denoise.stride", 2)};
    job.iwf.tol = c.num("denoise.tol", 1e-4);
    require_dim(w.output_dim(), prior.state_dim(), "denoise: whitener output vs model input");
    const Image clean = read_pgm(image_path);
    if (sweep) {
        const fs::path csv = report.empty() ? out : fs::path(report);
        write_bench(denoise_benchmark(job, {clean}, {fs::path(image_path).stem().string()}, c), csv);
        std::cout << "wrote " << csv.string() << "\n";
        return 0;
    }
    const Mat noisy = add_noise(clean.pixels, noise_std, seed);
    const Mat den = noise_std > 0 ? iwf_image(job, noisy, noise_std) : noisy;
    write_pgm(out.string(), den.cwiseMax(0.0).cwiseMin(255.0));
    if (!report.empty()) {
        auto f = open_out(report);
        f << "image,noise_std,seed,noisy_psnr,iwf_psnr,note\n" << image_path << ',' << noise_std << ',' << seed << ',';
        auto cell = [&](const Mat& probe) {
            try {
                f << psnr(clean.pixels, probe, 255);
                return std::string();
            } catch (const IdenticalSignal&) {
                f << "inf";
                return std::string("identical");
            }
        };
        std::string note = cell(noisy);
        f << ',';
        const std::string n2 = cell(den);
        f << ',' << (note.empty() ? n2 : note) << '\n';
    }
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// preprocess, stats
// ---------------------------------------------------------------------------

int cmd_preprocess(const Config& c, bool stereo, const fs::path& out) {
    fs::create_directories(out);
    const PatchData d = make_patch_data(c, stereo);
    write_patch_outputs(out, d, c);
    PatchBatch pb{d.X, d.side, d.side, d.eyes, Stage::Whitened};
    save_container((out / "patches.ebm").string(), to_container(pb));
    std::cout << "wrote " << d.X.rows() << " x " << d.X.cols() << " whitened patches to " << out.string() << "\n";
    return 0;
}

template <class M>
void model_stats(const M& m, const std::optional<Mat>& data, std::ostream& os) {
    os << "state_dim," << m.state_dim() << "\nparameters," << m.params().size() << "\nparam_norm," << m.params().norm()
       << '\n';
    if constexpr (requires(const M& x) { x.square_log_partition(); }) {
        try {
            os << "log_partition," << m.square_log_partition() << '\n';
        } catch (const Error&) {
        }
    }
    if (data) {
        require_dim(data->cols(), m.state_dim(), "stats: data dimension");
        os << "rows," << data->rows() << "\nmean_energy," << mean_energy(m, *data) << '\n';
    }
}

int cmd_stats(const std::string& path, const std::string& data_path) {
    const Container c = load_container(path);
    std::optional<Mat> data;
    if (!data_path.empty()) {
        data = load_rows(data_path);
    }
    std::cout.precision(10);
    std::cout << "key,value\nfamily," << c.family << '\n';
    if (c.family == "pot") {
        const PotModel m = pot_from(c);
        const auto& p = m.parameters();
        std::cout << "features," << p.features() << "\ntop_units," << p.top_units() << "\nalpha_mean,"
                  << p.alpha.mean() << "\nhierarchical," << p.hierarchical << '\n';
        model_stats(m, data, std::cout);
    } else if (c.family == "sigmoid-net") {
        model_stats(sigmoid_net_from(c), data, std::cout);
    } else if (c.family == "boltzmann") {
        const BoltzmannModel m = boltzmann_from(c);
        std::cout << "visible," << m.parameters().n_v() << "\nhidden," << m.parameters().n_h() << '\n';
        model_stats(m, data, std::cout);
    } else {
        for (const auto& [name, b] : c.blocks) {
            std::cout << "block_" << name << ',' << b.rows() << 'x' << b.cols() << '\n';
            if (b.size()) {
                std::cout << "mean_" << name << ',' << b.mean() << "\nstd_" << name << ','
                          << std::sqrt((b.array() - b.mean()).square().mean()) << '\n';
            }
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Energy-based image models: training, sampling, analysis and denoising"};
    app.require_subcommand(0, 1);
    unsigned threads = 0;
    bool dump = false;
    ConfigSources src;
    app.add_option("--threads", threads, "Worker threads (default: all cores)");
    app.add_option("--config", src.file, "key = value settings file")->check(CLI::ExistingFile);
    app.add_option("--set", src.sets, "Override one setting, key=value (repeatable)");
    app.add_option("--recipe", src.recipe, "Experiment recipe supplying defaults");
    app.add_flag("--smoke", src.smoke, "Shrink all counts for a fast end-to-end run");
    app.add_flag("--dump-defaults", dump, "Print the effective settings and exit");

    std::string out, model, data, whitener, pre, image, mode = "annealed";
    Index count = 100;
    std::uint64_t seed = 1;
    double noise_std = 20.0;
    bool sweep = false, stereo = false;

    auto* train_cmd = app.add_subcommand("train", "Train a model with the selected recipe");
    train_cmd->add_option("--out", out, "Output directory")->required();

    auto* sample_cmd = app.add_subcommand("sample", "Draw samples from a trained model");
    sample_cmd->add_option("--model", model, "Model file")->required();
    sample_cmd->add_option("--out", out, "Output sample file")->required();
    sample_cmd->add_option("--count", count, "Number of chains")->check(CLI::NonNegativeNumber);
    sample_cmd->add_option("--mode", mode, "cd-negative or annealed")
        ->check(CLI::IsMember({"cd-negative", "annealed"}));
    sample_cmd->add_option("--seed", seed, "Sampler seed");
    sample_cmd->add_option("--data", data, "Rows to start chains from");

    auto* analyze_cmd = app.add_subcommand("analyze", "Receptive fields, maps, tuning and ocularity reports");
    analyze_cmd->add_option("--model", model, "Model file")->required();
    analyze_cmd->add_option("--whitener", whitener, "Whitener (default: next to the model)");
    analyze_cmd->add_option("--preprocess", pre, "Preprocessing record (default: next to the model)");
    std::string lattice = "ring";
    analyze_cmd->add_option("--lattice", lattice, "Boltzmann hidden layout: ring or grid")
        ->check(CLI::IsMember({"ring", "grid"}));
    analyze_cmd->add_option("--out", out, "Output directory")->required();

    auto* denoise_cmd = app.add_subcommand("denoise", "Denoise an image with a PoT prior");
    denoise_cmd->add_option("--model", model, "Prior model file")->required();
    denoise_cmd->add_option("--whitener", whitener, "Whitener (default: next to the model)");
    denoise_cmd->add_option("--preprocess", pre, "Preprocessing record (default: next to the model)");
    denoise_cmd->add_option("--image", image, "Clean PGM image")->required();
    denoise_cmd->add_option("--noise-std", noise_std, "Noise standard deviation in grey levels")
        ->check(CLI::NonNegativeNumber);
    denoise_cmd->add_option("--seed", seed, "Noise seed");
    denoise_cmd->add_flag("--sweep", sweep, "Run every denoise.levels PSNR level against Wiener");
    std::string report;
    denoise_cmd->add_option("--report", report, "CSV report path");
    denoise_cmd->add_option("--out", out, "Output PGM (or CSV with --sweep)")->required();

    auto* pre_cmd = app.add_subcommand("preprocess", "Extract, center and whiten patches");
    pre_cmd->add_option("--out", out, "Output directory")->required();
    pre_cmd->add_flag("--stereo", stereo, "Build shifted stereo pairs");

    auto* stats_cmd = app.add_subcommand("stats", "Summarize a model or data file");
    stats_cmd->add_option("--model", model, "Container file")->required();
    stats_cmd->add_option("--data", data, "Rows for the mean energy");

    CLI11_PARSE(app, argc, argv);
    try {
        set_thread_count(threads > 0 ? threads : std::max(1u, std::thread::hardware_concurrency()));
        const Config cfg = build_config(src);
        if (dump) {
            cfg.dump(std::cout);
            return 0;
        }
        if (train_cmd->parsed()) {
            return cmd_train(cfg, out);
        }
        if (sample_cmd->parsed()) {
            return cmd_sample(cfg, model, data, count, mode, seed, out);
        }
        if (analyze_cmd->parsed()) {
            return cmd_analyze(cfg, model, whitener, pre, lattice, out);
        }
        if (denoise_cmd->parsed()) {
            return cmd_denoise(cfg, model, whitener, pre, image, noise_std, sweep, seed, out, report);
        }
        if (pre_cmd->parsed()) {
            return cmd_preprocess(cfg, stereo, out);
        }
        if (stats_cmd->parsed()) {
            return cmd_stats(model, data);
        }
        std::cout << app.help();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
