#include <CLI11.hpp>
#include <cstdlib>
#include <iomanip>
#include <iostream>

#include "depthadapt/trainer.hpp"
#include "depthadapt/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace depthadapt;

namespace {

std::string config_key_listing() {
    std::ostringstream os;
    os << "Config keys (file or --set key=value):\n";
    for (const auto& k : config_registry())
        os << "  " << std::left << std::setw(26) << k.key << " [" << k.module << "] default='" << k.def
           << "'  " << k.help << "\n";
    return os.str();
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
    Config cfg = path.empty() ? Config() : Config::from_file(path);
    for (const auto& kv : overrides) cfg.apply_override(kv);
    return cfg;
}

fs::path runs_root() {
    const char* env = std::getenv("DEPTHADAPT_RUNS_DIR");
    return env && *env ? fs::path(env) : fs::path("runs");
}

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    return s;
}

void print_metrics_row(const MetricsReport& rep) {
    std::cout << std::setprecision(10) << rep.abs_rel << '\t' << rep.sq_rel << '\t' << rep.rmse << '\t'
              << rep.rmse_log << '\t' << rep.a1 << '\t' << rep.a2 << '\t' << rep.a3 << '\n';
}

// Grayscale depth rendering for report grids.
Image depth_to_image(const DepthMap& d, float cap) {
    Image img(d.h, d.w);
    for (int r = 0; r < d.h; ++r)
        for (int c = 0; c < d.w; ++c) {
            float v = clamp01(d.at(r, c) / cap);
            for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = v;
        }
    return img;
}

Image hstack(const std::vector<Image>& tiles) {
    int w = 0;
    for (const auto& t : tiles) w += t.w;
    Image out(tiles[0].h, w);
    int off = 0;
    for (const auto& t : tiles) {
        for (int ch = 0; ch < 3; ++ch)
            for (int r = 0; r < t.h; ++r)
                for (int c = 0; c < t.w; ++c) out.at(ch, r, off + c) = t.at(ch, r, c);
        off += t.w;
    }
    return out;
}

int cmd_gen_data(const Config& cfg, const std::string& out_dir) {
    auto domains = generate_toy_domain_pair(uint32_t(cfg.integer("data.seed")), cfg.integer("data.n_source"),
                                            cfg.integer("data.n_target"), cfg.integer("data.h"),
                                            cfg.integer("data.w"), out_dir);
    std::cout << "source=" << domains.source.root.string() << " target=" << domains.target.root.string()
              << " target_eval=" << domains.target_eval.root.string() << "\n";
    return 0;
}

int cmd_pretrain(const Config& cfg, const std::string& resume_path) {
    auto source = load_manifest(cfg.str("data.source"));
    auto tc = TrainConfig::from_config(cfg, Stage::pretrain, source.h, source.w);
    fs::path run_dir = runs_root() / tc.name;
    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        if (resume->stage != Stage::pretrain) throw ConfigError("resume checkpoint is not a pretrain stage");
    }
    auto net = pretrain(source, tc, run_dir, resume ? &*resume : nullptr);
    std::cout << "checkpoint=" << (run_dir / ("ckpt-" + std::to_string(tc.epochs))).string()
              << " param_count=" << net.param_count() << "\n";
    return 0;
}

int cmd_adapt(const Config& cfg, const std::string& ckpt_path, const std::string& resume_path) {
    auto source = load_manifest(cfg.str("data.source"));
    auto target = load_manifest(cfg.str("data.target"));
    auto tc = TrainConfig::from_config(cfg, Stage::adapt, source.h, source.w);
    auto base = load_checkpoint(ckpt_path);
    fs::path run_dir = runs_root() / tc.name;
    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        if (resume->stage != Stage::adapt) throw ConfigError("resume checkpoint is not an adapt stage");
    }
    auto net = adapt(base.net, source, target, tc, run_dir, resume ? &*resume : nullptr);
    std::cout << "checkpoint=" << (run_dir / ("ckpt-" + std::to_string(tc.epochs))).string()
              << " concat_total=" << compose_batch(tc.batch_n, tc.r, tc.loss.streams).concat_total << "\n";
    return 0;
}

int cmd_evaluate(const Config& cfg, const std::string& ckpt_path, const std::string& data_dir, double cap,
                 const std::string& crop) {
    auto manifest = load_manifest(data_dir);
    EvalConfig ec = cfg.eval_config();
    if (cap > 0.0) ec.cap = float(cap);
    if (!crop.empty()) {
        if (crop == "garg")
            ec.crop = CropMode::garg;
        else if (crop == "none")
            ec.crop = CropMode::none;
        else
            throw ConfigError("--crop must be garg or none");
    }
    auto ckpt = load_checkpoint(ckpt_path);
    auto rep = evaluate_model(ckpt.net, manifest, ec);
    print_metrics_row(rep);
    std::cout << std::setprecision(10) << "abs_rel=" << rep.abs_rel << "\nsq_rel=" << rep.sq_rel
              << "\nrmse=" << rep.rmse << "\nrmse_log=" << rep.rmse_log << "\na1=" << rep.a1
              << "\na2=" << rep.a2 << "\na3=" << rep.a3 << "\nn_images=" << manifest.ids.size()
              << "\ncap=" << ec.cap << "\ncrop=" << (ec.crop == CropMode::garg ? "garg" : "none") << "\n";
    return 0;
}

int cmd_uncertainty(const std::string& ckpt_path, const std::string& images_dir) {
    auto manifest = load_manifest(images_dir);
    auto ckpt = load_checkpoint(ckpt_path);
    std::vector<Image> images;
    images.reserve(manifest.ids.size());
    for (const auto& id : manifest.ids) images.push_back(load_sample(manifest, id).image);
    auto score = uncertainty_score(ckpt.net, images);
    std::cout << std::setprecision(10) << "score=" << score.value << " n_images=" << score.n_images << "\n";
    for (size_t b = 0; b < score.per_block_means.size(); ++b)
        std::cout << "block_" << b << "=" << score.per_block_means[b] << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& grid_ckpt,
               const std::string& grid_data, const std::string& grid_out) {
    if (!run_dirs.empty()) {
        std::cout << "run\tsteps\tlast_lr\tlast_source\tlast_consistency\tlast_total\n";
        for (const auto& dir : run_dirs) {
            std::ifstream f(fs::path(dir) / "log.tsv");
            if (!f) throw std::runtime_error("no log.tsv under " + dir);
            std::string line, last;
            std::getline(f, line);  // header
            size_t steps = 0;
            while (std::getline(f, line))
                if (!line.empty()) {
                    last = line;
                    ++steps;
                }
            if (last.empty()) throw std::runtime_error("empty log.tsv under " + dir);
            std::istringstream ls(last);
            std::string step, lr, src, cons, total;
            ls >> step >> lr >> src >> cons >> total;
            std::cout << fs::path(dir).filename().string() << '\t' << steps << '\t' << lr << '\t' << src
                      << '\t' << cons << '\t' << total << "\n";
        }
    }
    if (!grid_out.empty()) {
        if (grid_ckpt.empty() || grid_data.empty())
            throw ConfigError("--grid-out needs --checkpoint and --data");
        auto manifest = load_manifest(grid_data);
        auto ckpt = load_checkpoint(grid_ckpt);
        fs::create_directories(grid_out);
        for (const auto& id : manifest.ids) {
            auto s = load_sample(manifest, id);
            auto pred = ckpt.net.predict(s.image);
            Image grid = hstack({s.image, depth_to_image(s.depth, manifest.cap),
                                 depth_to_image(pred, manifest.cap)});
            save_image_png(fs::path(grid_out) / (id + ".png"), grid);
        }
        std::cout << "grids=" << grid_out << " n=" << manifest.ids.size() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"depthadapt: consistency-regularised domain adaptation for monocular depth"};
    app.require_subcommand(1);
    app.footer(config_key_listing());

    std::string config_path;
    std::vector<std::string> overrides;
    auto add_cfg_opts = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run-config file (key = value per line)");
        sub->add_option("--set", overrides, "override a config key, e.g. --set batch.N=12")
            ->take_all();
    };

    auto* gen = app.add_subcommand("gen-data", "generate the paired toy source/target datasets");
    std::string out_dir = "data";
    gen->add_option("--out", out_dir, "output root directory");
    int seed_flag = -1;
    gen->add_option("--seed", seed_flag, "override data.seed");
    add_cfg_opts(gen);

    auto* pre = app.add_subcommand("pretrain", "supervised CutMix pretraining on the source domain");
    std::string resume_path;
    pre->add_option("--resume", resume_path, "checkpoint to resume from");
    add_cfg_opts(pre);

    auto* ada = app.add_subcommand("adapt", "joint source/consistency adaptation to the target domain");
    std::string ckpt_path;
    ada->add_option("--checkpoint", ckpt_path, "pretrained checkpoint")->required();
    ada->add_option("--resume", resume_path, "adapt-stage checkpoint to resume from");
    add_cfg_opts(ada);

    auto* eva = app.add_subcommand("evaluate", "print the seven-metric row for a checkpoint");
    std::string data_dir, crop;
    double cap = 0.0;
    eva->add_option("--checkpoint", ckpt_path, "checkpoint to evaluate")->required();
    eva->add_option("--data", data_dir, "labelled manifest directory")->required();
    eva->add_option("--cap", cap, "depth cap in meters (overrides metrics.cap)");
    eva->add_option("--crop", crop, "garg | none (overrides metrics.crop)");
    add_cfg_opts(eva);

    auto* unc = app.add_subcommand("uncertainty", "label-free uncertainty score for a checkpoint");
    std::string images_dir;
    unc->add_option("--checkpoint", ckpt_path, "checkpoint to score")->required();
    unc->add_option("--images", images_dir, "manifest directory of images")->required();
    add_cfg_opts(unc);

    auto* rep = app.add_subcommand("report", "side-by-side table of runs; optional prediction grids");
    std::vector<std::string> run_dirs;
    std::string grid_out;
    rep->add_option("runs", run_dirs, "run directories containing log.tsv");
    rep->add_option("--checkpoint", ckpt_path, "checkpoint for prediction grids");
    rep->add_option("--data", data_dir, "labelled manifest for prediction grids");
    rep->add_option("--grid-out", grid_out, "write input/GT/prediction grids to this directory");
    add_cfg_opts(rep);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto cfg = load_config(config_path, overrides);
            if (seed_flag >= 0) cfg.apply_override("data.seed=" + std::to_string(seed_flag));
            return cmd_gen_data(cfg, out_dir);
        }
        if (pre->parsed()) return cmd_pretrain(load_config(config_path, overrides), resume_path);
        if (ada->parsed()) return cmd_adapt(load_config(config_path, overrides), ckpt_path, resume_path);
        if (eva->parsed())
            return cmd_evaluate(load_config(config_path, overrides), ckpt_path, data_dir, cap, crop);
        if (unc->parsed()) return cmd_uncertainty(ckpt_path, images_dir);
        if (rep->parsed()) return cmd_report(run_dirs, ckpt_path, data_dir, grid_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
