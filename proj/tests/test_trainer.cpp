#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "depthadapt/trainer.hpp"

using namespace depthadapt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("depthadapt_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Tiny 16x16 toy pair shared by the slow trainer cases.
ToyDomains make_tiny_data(const fs::path& root) {
    return generate_toy_domain_pair(77, 6, 4, 32, 32, root);
}

TrainConfig tiny_pretrain_cfg() {
    TrainConfig cfg;
    cfg.stage = Stage::pretrain;
    cfg.lr = 1e-3;
    cfg.epochs = 4;
    cfg.decay_start_epoch = 4;
    cfg.batch_pre = 4;
    cfg.checkpoint_every = 2;
    cfg.model = ModelSpec{32, 32, 2, 3, toy::kDepthCap};
    return cfg;
}

TrainConfig tiny_adapt_cfg() {
    TrainConfig cfg;
    cfg.stage = Stage::adapt;
    cfg.lr = 1e-5;
    cfg.epochs = 2;
    cfg.decay_start_epoch = 1;
    cfg.batch_n = 4;
    cfg.r = Ratio{2, 1};
    cfg.loss.streams = 2;
    cfg.checkpoint_every = 1;
    cfg.aug.n = 1;
    cfg.aug.m = 7;
    cfg.model = ModelSpec{32, 32, 2, 3, toy::kDepthCap};
    return cfg;
}

std::vector<std::vector<std::string>> read_log(const fs::path& run_dir) {
    std::ifstream f(run_dir / "log.tsv");
    REQUIRE(f.good());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(f, line)) {
        std::vector<std::string> cells;
        size_t pos = 0;
        while (pos <= line.size()) {
            size_t tab = line.find('\t', pos);
            cells.push_back(line.substr(pos, tab == std::string::npos ? tab : tab - pos));
            if (tab == std::string::npos) break;
            pos = tab + 1;
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

TEST_CASE("learning-rate schedule: constant then linear decay") {
    TrainConfig cfg;
    cfg.lr = 4e-8;
    cfg.epochs = 10;
    cfg.decay_start_epoch = 4;
    CHECK(lr_at(cfg, 0) == doctest::Approx(4e-8));
    CHECK(lr_at(cfg, 3) == doctest::Approx(4e-8));
    CHECK(lr_at(cfg, 4) == doctest::Approx(4e-8));
    CHECK(lr_at(cfg, 7) == doctest::Approx(2e-8));
    CHECK(lr_at(cfg, 10) == doctest::Approx(0.0));
    CHECK_THROWS_AS(lr_at(cfg, -1), ArgumentError);
    CHECK_THROWS_AS(lr_at(cfg, 11), ArgumentError);

    cfg.decay_start_epoch = 10;  // = epochs disables decay
    for (int e = 0; e <= 9; ++e) CHECK(lr_at(cfg, e) == doctest::Approx(4e-8));
}

TEST_CASE("adam first step moves each parameter by about lr in the gradient direction") {
    ModelSpec spec{16, 16, 1, 2, 8.f};
    auto net = init_model(spec, 3);
    auto before = init_model(spec, 3);
    GradBuffer grads = net.make_grad_buffer();
    Rng rng(5);
    for (auto& b : grads.blocks) {
        for (auto& g : b.dw) g = urand(rng, -1.f, 1.f);
        for (auto& g : b.db) g = urand(rng, -1.f, 1.f);
    }
    GradBuffer copy = grads;
    AdamState adam = AdamState::init(net);
    const double lr = 1e-3;
    adam.step(net, grads, lr, /*clip=*/0.0);
    CHECK(adam.t == 1);
    auto nb = net.blocks();
    auto ob = before.blocks();
    for (size_t i = 0; i < nb.size(); ++i)
        for (size_t j = 0; j < nb[i]->w.size(); ++j) {
            float g = copy.blocks[i].dw[j];
            if (std::fabs(g) < 1e-3f) continue;  // eps regime
            double delta = double(nb[i]->w[j]) - ob[i]->w[j];
            CHECK(delta == doctest::Approx(-lr * (g > 0 ? 1.0 : -1.0)).epsilon(0.01));
        }
}

TEST_CASE("gradient clipping rescales to the requested global norm") {
    ModelSpec spec{16, 16, 1, 2, 8.f};
    auto net = init_model(spec, 3);
    GradBuffer grads = net.make_grad_buffer();
    for (auto& b : grads.blocks) {
        for (auto& g : b.dw) g = 2.f;
        for (auto& g : b.db) g = 2.f;
    }
    double before = grads.l2_norm();
    REQUIRE(before > 1.0);
    AdamState adam = AdamState::init(net);
    adam.step(net, grads, 0.0, /*clip=*/1.0);  // lr 0: only the clip mutates grads
    CHECK(grads.l2_norm() == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("checkpoint round-trip preserves every field") {
    TempDir tmp("ckpt");
    ModelSpec spec{16, 16, 2, 3, 10.f};
    Checkpoint c;
    c.stage = Stage::adapt;
    c.epoch_next = 7;
    c.config_hash = 0xabcdef12345678ull;
    c.net = init_model(spec, 9);
    c.adam = AdamState::init(c.net);
    c.adam.t = 42;
    Rng r1(123), r2(456);
    r1();
    c.rng_data = detail::rng_to_string(r1);
    c.rng_aug = detail::rng_to_string(r2);
    c.step = 99;
    c.last_total = 0.25;

    save_checkpoint(tmp.path / "ckpt-7", c);
    auto d = load_checkpoint(tmp.path / "ckpt-7");
    CHECK(d.stage == Stage::adapt);
    CHECK(d.epoch_next == 7);
    CHECK(d.config_hash == c.config_hash);
    CHECK(d.net.checksum() == c.net.checksum());
    CHECK(d.adam.t == 42);
    CHECK(d.rng_data == c.rng_data);
    CHECK(d.rng_aug == c.rng_aug);
    CHECK(d.step == 99);
    CHECK(d.last_total == 0.25);
    // Restored RNG continues the original stream.
    Rng restored = detail::rng_from_string(d.rng_data);
    CHECK(restored() == r1());

    CHECK_THROWS_AS(load_checkpoint(tmp.path / "missing"), std::runtime_error);
}

TEST_CASE("pretrain is deterministic and resume matches an uninterrupted run") {
    TempDir tmp("pretrain");
    auto domains = make_tiny_data(tmp.path / "data");
    auto cfg = tiny_pretrain_cfg();

    auto run_a = tmp.path / "a";
    fs::create_directories(run_a);
    auto net_a = pretrain(domains.source, cfg, run_a);

    auto run_b = tmp.path / "b";
    fs::create_directories(run_b);
    auto net_b = pretrain(domains.source, cfg, run_b);
    CHECK(net_a.checksum() == net_b.checksum());

    // Resume from the mid-run checkpoint and land on the same parameters.
    auto mid = load_checkpoint(run_a / "ckpt-2");
    CHECK(mid.epoch_next == 2);
    auto run_c = tmp.path / "c";
    fs::create_directories(run_c);
    auto net_c = pretrain(domains.source, cfg, run_c, &mid);
    CHECK(net_c.checksum() == net_a.checksum());

    // Final checkpoint carries the finished model.
    auto fin = load_checkpoint(run_a / ("ckpt-" + std::to_string(cfg.epochs)));
    CHECK(fin.net.checksum() == net_a.checksum());
    CHECK(fin.epoch_next == cfg.epochs);

    // log.tsv: 6 samples / batch 4 -> 2 steps per epoch, 4 epochs.
    auto rows = read_log(run_a);
    REQUIRE(rows.size() == 9);  // header + 8 steps
    CHECK(rows[0][0] == "step");
}

TEST_CASE("adapt is deterministic, logs total = (source + consistency)/2, and resumes") {
    TempDir tmp("adapt");
    auto domains = make_tiny_data(tmp.path / "data");
    auto pre_cfg = tiny_pretrain_cfg();
    pre_cfg.epochs = 1;
    pre_cfg.checkpoint_every = 0;
    auto run_pre = tmp.path / "pre";
    fs::create_directories(run_pre);
    auto base = pretrain(domains.source, pre_cfg, run_pre);

    auto cfg = tiny_adapt_cfg();
    auto run_a = tmp.path / "a";
    fs::create_directories(run_a);
    auto net_a = adapt(base, domains.source, domains.target, cfg, run_a);

    auto run_b = tmp.path / "b";
    fs::create_directories(run_b);
    auto net_b = adapt(base, domains.source, domains.target, cfg, run_b);
    CHECK(net_a.checksum() == net_b.checksum());
    CHECK(net_a.checksum() != base.checksum());

    auto mid = load_checkpoint(run_a / "ckpt-1");
    auto run_c = tmp.path / "c";
    fs::create_directories(run_c);
    auto net_c = adapt(base, domains.source, domains.target, cfg, run_c, &mid);
    CHECK(net_c.checksum() == net_a.checksum());

    // Batch plan: N=4, r=2/1, streams=2 -> U=2 originals, concat 12; 4 target
    // images give 2 steps per epoch.
    auto rows = read_log(run_a);
    REQUIRE(rows.size() == 5);  // header + 2 epochs * 2 steps
    REQUIRE(rows[0].size() == 6);
    for (size_t i = 1; i < rows.size(); ++i) {
        double src = std::stod(rows[i][2]), cons = std::stod(rows[i][3]), total = std::stod(rows[i][4]);
        CHECK(total == doctest::Approx(0.5 * (src + cons)).epsilon(1e-9));
        CHECK(rows[i][5] == "12");
    }
}

TEST_CASE("stage and manifest mismatches are rejected") {
    TempDir tmp("reject");
    auto domains = make_tiny_data(tmp.path / "data");
    auto pre_cfg = tiny_pretrain_cfg();
    auto ad_cfg = tiny_adapt_cfg();
    auto net = init_model(pre_cfg.model, 1);
    CHECK_THROWS_AS(pretrain(domains.source, ad_cfg, tmp.path), ConfigError);
    CHECK_THROWS_AS(pretrain(domains.target, pre_cfg, tmp.path), ConfigError);
    CHECK_THROWS_AS(adapt(net, domains.source, domains.source, ad_cfg, tmp.path), ConfigError);
    CHECK_THROWS_AS(adapt(net, domains.target, domains.target, ad_cfg, tmp.path), ConfigError);
    CHECK_THROWS_AS(adapt(net, domains.source, domains.target, pre_cfg, tmp.path), ConfigError);
}

TEST_CASE("evaluate_model averages per-image metrics") {
    TempDir tmp("eval");
    auto domains = make_tiny_data(tmp.path / "data");
    ModelSpec spec{32, 32, 2, 3, toy::kDepthCap};
    auto net = init_model(spec, 2);
    EvalConfig cfg;
    cfg.cap = toy::kDepthCap;
    cfg.crop = CropMode::garg;
    auto rep = evaluate_model(net, domains.target_eval, cfg);

    // Oracle: mean of compute_metrics over the same samples.
    double abs_rel = 0;
    for (const auto& id : domains.target_eval.ids) {
        auto s = load_sample(domains.target_eval, id);
        abs_rel += compute_metrics(net.predict(s.image), s.depth, cfg).abs_rel;
    }
    abs_rel /= double(domains.target_eval.ids.size());
    CHECK(rep.abs_rel == doctest::Approx(abs_rel).epsilon(1e-12));
    CHECK(rep.a1 >= 0.0);
    CHECK(rep.a3 <= 1.0);

    DatasetManifest empty = domains.target_eval;
    empty.ids.clear();
    CHECK_THROWS_AS(evaluate_model(net, empty, cfg), ArgumentError);
}

TEST_CASE("config: file parsing, overrides, defaults, and unknown keys") {
    TempDir tmp("config");
    auto path = tmp.path / "run.conf";
    {
        std::ofstream f(path);
        f << "# comment line\n";
        f << "train.profile = paper-scale\n";
        f << "batch.N = 12\n";
        f << "batch.r = 2/1\n";
        f << "loss.streams = 3\n";
        f << "\n";
    }
    auto cfg = Config::from_file(path);
    CHECK(cfg.str("train.profile") == "paper-scale");
    CHECK(cfg.integer("batch.N") == 12);
    cfg.apply_override("batch.N=24");
    CHECK(cfg.integer("batch.N") == 24);
    CHECK_THROWS_AS(cfg.apply_override("no.such.key=1"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("malformed"), ConfigError);
    uint64_t h1 = cfg.hash();
    cfg.apply_override("batch.N=12");
    CHECK(cfg.hash() != h1);

    // Profile defaults flow into TrainConfig; explicit values win.
    auto pre = TrainConfig::from_config(cfg, Stage::pretrain, 16, 16);
    CHECK(pre.lr == doctest::Approx(4e-3));
    CHECK(pre.epochs == 250);
    CHECK(pre.grad_clip == 0.0);
    CHECK(pre.decay_start_epoch == pre.epochs);
    auto ad = TrainConfig::from_config(cfg, Stage::adapt, 16, 16);
    CHECK(ad.lr == doctest::Approx(4e-8));
    CHECK(ad.epochs == 10);
    CHECK(ad.decay_start_epoch == 4);

    cfg.apply_override("train.profile=desk");
    cfg.apply_override("train.lr=2e-3");
    auto desk = TrainConfig::from_config(cfg, Stage::pretrain, 16, 16);
    CHECK(desk.lr == doctest::Approx(2e-3));
    CHECK(desk.epochs == 50);
    CHECK(desk.grad_clip == 10.0);
    auto desk_ad = TrainConfig::from_config(cfg, Stage::adapt, 16, 16);
    CHECK(desk_ad.lr == doctest::Approx(2e-3));  // explicit lr overrides profile

    cfg.apply_override("train.profile=unknown");
    CHECK_THROWS_AS(TrainConfig::from_config(cfg, Stage::pretrain, 16, 16), ConfigError);
}
