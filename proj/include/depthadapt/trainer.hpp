#pragma once

#include <iomanip>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "depthadapt/config.hpp"
#include "depthadapt/dataset.hpp"
#include "depthadapt/losses.hpp"
#include "depthadapt/metrics.hpp"
#include "depthadapt/model.hpp"

namespace depthadapt {

enum class Stage { pretrain, adapt };

struct TrainConfig {
    Stage stage = Stage::pretrain;
    double lr = 4e-3;
    int epochs = 50;
    int decay_start_epoch = 50;  // = epochs disables decay
    int batch_n = 12;            // adapt: source pairs per step
    Ratio r{2, 1};
    int batch_pre = 8;           // pretrain batch size
    float cutmix_alpha = 0.5f;
    LossConfig loss;
    RandAugmentPolicy aug;
    uint32_t seed_model = 1, seed_data = 2, seed_augment = 3;
    int checkpoint_every = 5;    // epochs; 0 = final only
    double grad_clip = 10.0;     // global norm; 0 disables
    std::string name = "run";
    ModelSpec model;
    uint64_t config_hash = 0;

    static TrainConfig from_config(const Config& cfg, Stage stage, int h, int w) {
        TrainConfig t;
        t.stage = stage;
        const std::string profile = cfg.str("train.profile");
        if (profile != "desk" && profile != "paper-scale")
            throw ConfigError("train.profile must be desk or paper-scale");
        const bool paper = profile == "paper-scale";
        if (stage == Stage::pretrain) {
            t.lr = 4e-3;
            t.epochs = paper ? 250 : 50;
        } else {
            t.lr = paper ? 4e-8 : 5e-5;
            t.epochs = 10;
        }
        if (!cfg.empty_value("train.lr")) t.lr = cfg.real("train.lr");
        if (!cfg.empty_value("train.epochs")) t.epochs = cfg.integer("train.epochs");
        t.decay_start_epoch = stage == Stage::adapt ? cfg.integer("train.decay_start_epoch") : t.epochs;
        t.grad_clip = paper ? 0.0 : 10.0;
        if (!cfg.empty_value("train.grad_clip")) t.grad_clip = cfg.real("train.grad_clip");
        t.batch_n = cfg.integer("batch.N");
        t.r = Ratio::parse(cfg.str("batch.r"));
        t.batch_pre = cfg.integer("train.batch_pre");
        t.cutmix_alpha = float(cfg.real("train.cutmix_alpha"));
        t.loss = cfg.loss_config();
        t.aug = cfg.aug_policy();
        t.seed_model = uint32_t(cfg.integer("train.seed_model"));
        t.seed_data = uint32_t(cfg.integer("train.seed_data"));
        t.seed_augment = uint32_t(cfg.integer("train.seed_augment"));
        t.checkpoint_every = cfg.integer("train.checkpoint_every");
        t.name = cfg.str("train.name");
        t.model = cfg.model_spec(h, w);
        t.config_hash = cfg.hash();
        return t;
    }
};

/// Learning-rate schedule: constant until decay_start_epoch, then linear to 0
/// at cfg.epochs.
inline double lr_at(const TrainConfig& cfg, int epoch) {
    if (epoch < 0 || epoch > cfg.epochs) throw ArgumentError("lr_at: epoch out of range");
    if (epoch < cfg.decay_start_epoch) return cfg.lr;
    return cfg.lr * double(cfg.epochs - epoch) / double(cfg.epochs - cfg.decay_start_epoch);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    uint64_t t = 0;
    GradBuffer m, v;

    static AdamState init(const DepthNet& net) {
        AdamState s;
        s.m = net.make_grad_buffer();
        s.v = net.make_grad_buffer();
        return s;
    }

    void step(DepthNet& net, GradBuffer& grads, double lr, double clip) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        if (clip > 0.0) {
            double norm = grads.l2_norm();
            if (norm > clip) {
                float s = float(clip / norm);
                for (auto& blk : grads.blocks) {
                    for (auto& g : blk.dw) g *= s;
                    for (auto& g : blk.db) g *= s;
                }
            }
        }
        ++t;
        const double c1 = 1.0 - std::pow(b1, double(t)), c2 = 1.0 - std::pow(b2, double(t));
        auto blocks = net.blocks();
        for (size_t i = 0; i < blocks.size(); ++i) {
            auto upd = [&](std::vector<float>& p, std::vector<float>& g, std::vector<float>& mm,
                           std::vector<float>& vv) {
                for (size_t j = 0; j < p.size(); ++j) {
                    mm[j] = float(b1 * mm[j] + (1.0 - b1) * g[j]);
                    vv[j] = float(b2 * vv[j] + (1.0 - b2) * double(g[j]) * g[j]);
                    p[j] -= float(lr * (mm[j] / c1) / (std::sqrt(vv[j] / c2) + eps));
                }
            };
            upd(blocks[i]->w, grads.blocks[i].dw, m.blocks[i].dw, v.blocks[i].dw);
            upd(blocks[i]->b, grads.blocks[i].db, m.blocks[i].db, v.blocks[i].db);
        }
    }
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
    Stage stage = Stage::pretrain;
    int epoch_next = 0;  // first epoch still to run
    uint64_t config_hash = 0;
    DepthNet net;
    AdamState adam;
    std::string rng_data, rng_aug;  // serialized mt19937 states
    uint64_t step = 0;
    double last_total = 0.0;
};

namespace ckpt_io {

inline void write_floats(std::ofstream& f, const std::vector<float>& v) {
    uint64_t n = v.size();
    f.write(reinterpret_cast<const char*>(&n), 8);
    f.write(reinterpret_cast<const char*>(v.data()), std::streamsize(n * 4));
}

inline std::vector<float> read_floats(std::ifstream& f) {
    uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 8);
    std::vector<float> v(n);
    f.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * 4));
    return v;
}

inline void write_string(std::ofstream& f, const std::string& s) {
    uint64_t n = s.size();
    f.write(reinterpret_cast<const char*>(&n), 8);
    f.write(s.data(), std::streamsize(n));
}

inline std::string read_string(std::ifstream& f) {
    uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 8);
    std::string s(n, '\0');
    f.read(s.data(), std::streamsize(n));
    return s;
}

inline void write_grad_buffer(std::ofstream& f, const GradBuffer& g) {
    for (const auto& b : g.blocks) {
        write_floats(f, b.dw);
        write_floats(f, b.db);
    }
}

inline void read_grad_buffer(std::ifstream& f, GradBuffer& g) {
    for (auto& b : g.blocks) {
        b.dw = read_floats(f);
        b.db = read_floats(f);
    }
}

}  // namespace ckpt_io

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
    f.write("DACK", 4);
    uint32_t version = 1, stage = c.stage == Stage::pretrain ? 0u : 1u, epoch = uint32_t(c.epoch_next);
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&stage), 4);
    f.write(reinterpret_cast<const char*>(&epoch), 4);
    f.write(reinterpret_cast<const char*>(&c.config_hash), 8);
    const auto& s = c.net.spec();
    int32_t dims[4] = {s.h, s.w, s.depth, s.base};
    f.write(reinterpret_cast<const char*>(dims), 16);
    f.write(reinterpret_cast<const char*>(&s.max_depth), 4);
    for (const auto* b : c.net.blocks()) {
        ckpt_io::write_floats(f, b->w);
        ckpt_io::write_floats(f, b->b);
    }
    uint64_t t = c.adam.t;
    f.write(reinterpret_cast<const char*>(&t), 8);
    ckpt_io::write_grad_buffer(f, c.adam.m);
    ckpt_io::write_grad_buffer(f, c.adam.v);
    ckpt_io::write_string(f, c.rng_data);
    ckpt_io::write_string(f, c.rng_aug);
    f.write(reinterpret_cast<const char*>(&c.step), 8);
    f.write(reinterpret_cast<const char*>(&c.last_total), 8);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read checkpoint " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (std::memcmp(magic, "DACK", 4) != 0) throw std::runtime_error("bad checkpoint magic: " + path.string());
    uint32_t version = 0, stage = 0, epoch = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    f.read(reinterpret_cast<char*>(&stage), 4);
    f.read(reinterpret_cast<char*>(&epoch), 4);
    Checkpoint c;
    c.stage = stage == 0 ? Stage::pretrain : Stage::adapt;
    c.epoch_next = int(epoch);
    f.read(reinterpret_cast<char*>(&c.config_hash), 8);
    ModelSpec s;
    int32_t dims[4];
    f.read(reinterpret_cast<char*>(dims), 16);
    f.read(reinterpret_cast<char*>(&s.max_depth), 4);
    s.h = dims[0];
    s.w = dims[1];
    s.depth = dims[2];
    s.base = dims[3];
    c.net = DepthNet(s, 0);
    for (auto* b : c.net.blocks()) {
        b->w = ckpt_io::read_floats(f);
        b->b = ckpt_io::read_floats(f);
    }
    c.adam = AdamState::init(c.net);
    f.read(reinterpret_cast<char*>(&c.adam.t), 8);
    ckpt_io::read_grad_buffer(f, c.adam.m);
    ckpt_io::read_grad_buffer(f, c.adam.v);
    c.rng_data = ckpt_io::read_string(f);
    c.rng_aug = ckpt_io::read_string(f);
    f.read(reinterpret_cast<char*>(&c.step), 8);
    f.read(reinterpret_cast<char*>(&c.last_total), 8);
    if (!f) throw std::runtime_error("truncated checkpoint " + path.string());
    return c;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace detail {

inline std::string rng_to_string(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline Rng rng_from_string(const std::string& s) {
    Rng rng;
    std::istringstream is(s);
    is >> rng;
    return rng;
}

inline std::vector<DepthSample> load_all(const DatasetManifest& m) {
    std::vector<DepthSample> out;
    out.reserve(m.ids.size());
    for (const auto& id : m.ids) out.push_back(load_sample(m, id));
    return out;
}

inline void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[size_t(irand(rng, 0, int(i) - 1))]);
}

struct BackwardJob {
    const Image* image;
    DepthMap dpred;
};

inline bool grad_is_zero(const DepthMap& g) {
    for (float v : g.data)
        if (v != 0.f) return false;
    return true;
}

// Forward+backward over a job list with per-thread gradient buffers reduced
// in thread order; deterministic for a fixed thread count.
inline void run_backward_jobs(const DepthNet& net, const std::vector<BackwardJob>& jobs, GradBuffer& grads) {
#ifdef _OPENMP
    int nthreads = omp_get_max_threads();
#else
    int nthreads = 1;
#endif
    std::vector<GradBuffer> locals;
    locals.reserve(size_t(nthreads));
    for (int i = 0; i < nthreads; ++i) locals.push_back(net.make_grad_buffer());
#pragma omp parallel for schedule(static)
    for (size_t j = 0; j < jobs.size(); ++j) {
#ifdef _OPENMP
        GradBuffer& local = locals[size_t(omp_get_thread_num())];
#else
        GradBuffer& local = locals[0];
#endif
        DepthNet::Activations acts;
        net.forward(*jobs[j].image, &acts);
        net.backward(acts, jobs[j].dpred, local);
    }
    for (const auto& local : locals) grads.add(local);
}

inline std::vector<DepthMap> forward_all(const DepthNet& net, const std::vector<Image>& imgs) {
    std::vector<DepthMap> preds(imgs.size());
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < imgs.size(); ++i) preds[i] = net.predict(imgs[i]);
    return preds;
}

class StepLogger {
  public:
    StepLogger(const std::filesystem::path& run_dir, bool append) {
        std::filesystem::create_directories(run_dir);
        auto path = run_dir / "log.tsv";
        bool fresh = !append || !std::filesystem::exists(path);
        f_.open(path, append ? std::ios::app : std::ios::trunc);
        f_ << std::setprecision(17);  // round-trippable doubles
        if (fresh) f_ << "step\tlr\tsource_loss\tconsistency_loss\ttotal\tconcat\n";
    }
    void log(uint64_t step, double lr, double src, double cons, double total, int concat) {
        f_ << step << '\t' << lr << '\t' << src << '\t' << cons << '\t' << total << '\t' << concat << '\n';
        f_.flush();
    }

  private:
    std::ofstream f_;
};

}  // namespace detail

/// CutMix-augmented supervised pretraining on the labelled source domain.
inline DepthNet pretrain(const DatasetManifest& source, const TrainConfig& cfg,
                         const std::filesystem::path& run_dir, const Checkpoint* resume = nullptr) {
    if (cfg.stage != Stage::pretrain) throw ConfigError("pretrain: config stage mismatch");
    if (source.domain != Domain::source) throw ConfigError("pretrain: manifest is not a labelled source set");

    auto samples = detail::load_all(source);
    for (const auto& s : samples) {
        bool any_valid = false;
        for (float v : s.depth.data) any_valid = any_valid || v > 0.f;
        if (!any_valid) throw ConfigError("pretrain: sample " + s.id + " has no depth labels");
    }

    DepthNet net = resume ? resume->net : init_model(cfg.model, cfg.seed_model);
    if (resume && !(net.spec() == cfg.model)) throw ConfigError("pretrain: checkpoint spec mismatch");
    AdamState adam = resume ? resume->adam : AdamState::init(net);
    Rng rng_data = resume ? detail::rng_from_string(resume->rng_data) : Rng(cfg.seed_data);
    Rng rng_aug = resume ? detail::rng_from_string(resume->rng_aug) : Rng(cfg.seed_augment);
    int start_epoch = resume ? resume->epoch_next : 0;
    uint64_t step = resume ? resume->step : 0;

    detail::StepLogger logger(run_dir, resume != nullptr);
    std::vector<size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), size_t(0));

    double last_total = 0.0;
    auto checkpoint = [&](int epoch_next) {
        Checkpoint c;
        c.stage = Stage::pretrain;
        c.epoch_next = epoch_next;
        c.config_hash = cfg.config_hash;
        c.net = net;
        c.adam = adam;
        c.rng_data = detail::rng_to_string(rng_data);
        c.rng_aug = detail::rng_to_string(rng_aug);
        c.step = step;
        c.last_total = last_total;
        save_checkpoint(run_dir / ("ckpt-" + std::to_string(epoch_next)), c);
    };

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        // Start from canonical order so the epoch permutation is a pure
        // function of the RNG state (required for checkpoint resume).
        std::iota(idx.begin(), idx.end(), size_t(0));
        detail::shuffle_indices(idx, rng_data);
        const double lr = lr_at(cfg, epoch);
        for (size_t off = 0; off < idx.size(); off += size_t(cfg.batch_pre)) {
            size_t bs = std::min(size_t(cfg.batch_pre), idx.size() - off);
            std::vector<DepthSample> batch;
            batch.reserve(bs);
            for (size_t i = 0; i < bs; ++i)
                batch.push_back(pretrain_augment(samples[idx[off + i]], rng_aug));
            // Mix each sample with a random partner from the same batch.
            std::vector<DepthSample> mixed;
            mixed.reserve(bs);
            for (size_t i = 0; i < bs; ++i) {
                size_t j = size_t(irand(rng_aug, 0, int(bs) - 1));
                mixed.push_back(cutmix(batch[i], batch[j], cfg.cutmix_alpha, rng_aug));
            }
            std::vector<Image> imgs;
            std::vector<DepthMap> labels;
            for (auto& s : mixed) {
                imgs.push_back(std::move(s.image));
                labels.push_back(std::move(s.depth));
            }
            auto preds = detail::forward_all(net, imgs);
            std::vector<DepthMap> grads_pred;
            double loss = pretrain_loss(preds, labels, &grads_pred);
            if (!std::isfinite(loss)) {
                std::string ids;
                for (size_t i = 0; i < bs; ++i) ids += samples[idx[off + i]].id + " ";
                throw NonFiniteLossError("pretrain: non-finite loss at step " + std::to_string(step) +
                                         "; batch ids: " + ids);
            }
            std::vector<detail::BackwardJob> jobs;
            for (size_t i = 0; i < bs; ++i)
                if (!detail::grad_is_zero(grads_pred[i])) jobs.push_back({&imgs[i], std::move(grads_pred[i])});
            GradBuffer grads = net.make_grad_buffer();
            detail::run_backward_jobs(net, jobs, grads);
            adam.step(net, grads, lr, cfg.grad_clip);
            last_total = loss;
            ++step;
            logger.log(step, lr, loss, 0.0, loss, int(bs));
        }
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs)
            checkpoint(epoch + 1);
    }
    checkpoint(cfg.epochs);
    return net;
}

/// Joint source/target adaptation: pairwise source loss plus multi-stream
/// perturbation consistency, optimised simultaneously in each step.
inline DepthNet adapt(const DepthNet& pretrained, const DatasetManifest& source,
                      const DatasetManifest& target, const TrainConfig& cfg,
                      const std::filesystem::path& run_dir, const Checkpoint* resume = nullptr) {
    if (cfg.stage != Stage::adapt) throw ConfigError("adapt: config stage mismatch");
    if (source.domain != Domain::source) throw ConfigError("adapt: source manifest must be source-domain");
    if (target.domain != Domain::target) throw ConfigError("adapt: target manifest must be target-domain");

    const BatchPlan plan = compose_batch(cfg.batch_n, cfg.r, cfg.loss.streams);
    auto src_samples = detail::load_all(source);
    auto tgt_samples = detail::load_all(target);
    if (tgt_samples.size() < size_t(plan.unsup_originals))
        throw ConfigError("adapt: target set smaller than one batch of originals");

    DepthNet net = resume ? resume->net : pretrained;
    if (!(net.spec() == cfg.model)) throw ConfigError("adapt: model spec mismatch");
    AdamState adam = resume ? resume->adam : AdamState::init(net);
    Rng rng_data = resume ? detail::rng_from_string(resume->rng_data) : Rng(cfg.seed_data);
    Rng rng_aug = resume ? detail::rng_from_string(resume->rng_aug) : Rng(cfg.seed_augment);
    int start_epoch = resume ? resume->epoch_next : 0;
    uint64_t step = resume ? resume->step : 0;

    detail::StepLogger logger(run_dir, resume != nullptr);
    std::vector<size_t> tgt_idx(tgt_samples.size());
    std::iota(tgt_idx.begin(), tgt_idx.end(), size_t(0));

    double last_total = 0.0;
    auto checkpoint = [&](int epoch_next) {
        Checkpoint c;
        c.stage = Stage::adapt;
        c.epoch_next = epoch_next;
        c.config_hash = cfg.config_hash;
        c.net = net;
        c.adam = adam;
        c.rng_data = detail::rng_to_string(rng_data);
        c.rng_aug = detail::rng_to_string(rng_aug);
        c.step = step;
        c.last_total = last_total;
        save_checkpoint(run_dir / ("ckpt-" + std::to_string(epoch_next)), c);
    };

    const int U = plan.unsup_originals, S = plan.streams - 1;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        // Canonical order first: see pretrain.
        std::iota(tgt_idx.begin(), tgt_idx.end(), size_t(0));
        detail::shuffle_indices(tgt_idx, rng_data);
        const double lr = lr_at(cfg, epoch);
        const size_t steps_per_epoch = tgt_idx.size() / size_t(U);  // remainder dropped
        for (size_t sidx = 0; sidx < steps_per_epoch; ++sidx) {
            // Source pairs drawn with replacement; target originals from the
            // shuffled epoch order.
            std::vector<std::pair<size_t, size_t>> pair_ids(size_t(plan.sup_pairs));
            for (auto& p : pair_ids) {
                p.first = size_t(irand(rng_data, 0, int(src_samples.size()) - 1));
                p.second = size_t(irand(rng_data, 0, int(src_samples.size()) - 1));
            }
            std::vector<size_t> originals(tgt_idx.begin() + std::ptrdiff_t(sidx * size_t(U)),
                                          tgt_idx.begin() + std::ptrdiff_t((sidx + 1) * size_t(U)));

            // One concatenated forward pass: target originals, their
            // perturbation streams, then the source pair images.
            std::vector<Image> imgs;
            imgs.reserve(size_t(plan.concat_total));
            std::vector<GeometricRecord> records(size_t(U) * size_t(S));
            for (size_t u = 0; u < originals.size(); ++u) imgs.push_back(tgt_samples[originals[u]].image);
            for (size_t u = 0; u < originals.size(); ++u)
                for (int s = 0; s < S; ++s) {
                    auto [img, rec] = rand_augment(tgt_samples[originals[u]].image, cfg.aug, rng_aug);
                    records[u * size_t(S) + size_t(s)] = std::move(rec);
                    imgs.push_back(std::move(img));
                }
            for (const auto& p : pair_ids) {
                imgs.push_back(src_samples[p.first].image);
                imgs.push_back(src_samples[p.second].image);
            }
            if (int(imgs.size()) != plan.concat_total)
                throw std::logic_error("adapt: concatenated batch size mismatch");

            auto preds = detail::forward_all(net, imgs);

            // Chunk predictions back: [0,U) refs, [U, U+U*S) streams, rest source.
            const size_t src_off = size_t(U) * size_t(1 + S);
            std::vector<SourcePair> pairs(pair_ids.size());
            for (size_t i = 0; i < pair_ids.size(); ++i) {
                pairs[i].pred1 = preds[src_off + 2 * i];
                pairs[i].pred2 = preds[src_off + 2 * i + 1];
                pairs[i].label1 = src_samples[pair_ids[i].first].depth;
                pairs[i].label2 = src_samples[pair_ids[i].second].depth;
            }
            std::vector<std::pair<DepthMap, DepthMap>> src_grads;
            double src_loss = source_loss(cfg.loss, pairs, &src_grads);

            double cons_loss = 0.0;
            std::vector<ConsistencyGrads> cons_grads;
            cons_grads.resize(size_t(U));
            for (int u = 0; u < U; ++u) {
                std::vector<DepthMap> aug_preds(preds.begin() + std::ptrdiff_t(size_t(U) + size_t(u) * S),
                                                preds.begin() + std::ptrdiff_t(size_t(U) + size_t(u + 1) * S));
                std::vector<GeometricRecord> recs(records.begin() + std::ptrdiff_t(size_t(u) * S),
                                                  records.begin() + std::ptrdiff_t(size_t(u + 1) * S));
                cons_loss += consistency_loss(preds[size_t(u)], aug_preds, recs, cfg.loss, &cons_grads[size_t(u)]);
                if (cons_grads[size_t(u)].empty_streams > 0)
                    std::cerr << "adapt: " << cons_grads[size_t(u)].empty_streams
                              << " empty consistency stream(s) at step " << step << "\n";
            }
            cons_loss /= double(U);

            double total;
            try {
                total = total_loss(src_loss, cons_loss);
            } catch (const NonFiniteLossError&) {
                std::string ids;
                for (size_t u : originals) ids += tgt_samples[u].id + " ";
                throw NonFiniteLossError("adapt: non-finite loss at step " + std::to_string(step) +
                                         "; target ids: " + ids);
            }

            // d(total)/d(term) = 0.5; consistency grads additionally carry 1/U.
            std::vector<detail::BackwardJob> jobs;
            const float cs = 0.5f / float(U);
            for (int u = 0; u < U; ++u) {
                auto& cg = cons_grads[size_t(u)];
                detail::scale_grad(cg.ref, cs);
                if (!detail::grad_is_zero(cg.ref)) jobs.push_back({&imgs[size_t(u)], std::move(cg.ref)});
                for (int s = 0; s < S; ++s) {
                    detail::scale_grad(cg.aug[size_t(s)], cs);
                    if (!detail::grad_is_zero(cg.aug[size_t(s)]))
                        jobs.push_back({&imgs[size_t(U) + size_t(u) * S + size_t(s)],
                                        std::move(cg.aug[size_t(s)])});
                }
            }
            for (size_t i = 0; i < src_grads.size(); ++i) {
                detail::scale_grad(src_grads[i].first, 0.5f);
                detail::scale_grad(src_grads[i].second, 0.5f);
                if (!detail::grad_is_zero(src_grads[i].first))
                    jobs.push_back({&imgs[src_off + 2 * i], std::move(src_grads[i].first)});
                if (!detail::grad_is_zero(src_grads[i].second))
                    jobs.push_back({&imgs[src_off + 2 * i + 1], std::move(src_grads[i].second)});
            }
            GradBuffer grads = net.make_grad_buffer();
            detail::run_backward_jobs(net, jobs, grads);
            adam.step(net, grads, lr, cfg.grad_clip);
            last_total = total;
            ++step;
            logger.log(step, lr, src_loss, cons_loss, total, plan.concat_total);
        }
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs)
            checkpoint(epoch + 1);
    }
    checkpoint(cfg.epochs);
    return net;
}

/// Mean of per-image metric reports over a labelled manifest.
inline MetricsReport evaluate_model(const DepthNet& net, const DatasetManifest& labelled,
                                    const EvalConfig& cfg) {
    if (labelled.ids.empty()) throw ArgumentError("evaluate_model: empty manifest");
    MetricsReport acc;
    std::vector<MetricsReport> reports(labelled.ids.size());
    // Exceptions must not escape the parallel region; marshal the first one.
    std::exception_ptr err;
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < labelled.ids.size(); ++i) {
        try {
            auto s = load_sample(labelled, labelled.ids[i]);
            reports[i] = compute_metrics(net.predict(s.image), s.depth, cfg);
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);
    for (const auto& r : reports) {
        acc.abs_rel += r.abs_rel;
        acc.sq_rel += r.sq_rel;
        acc.rmse += r.rmse;
        acc.rmse_log += r.rmse_log;
        acc.a1 += r.a1;
        acc.a2 += r.a2;
        acc.a3 += r.a3;
        acc.valid_pixel_count += r.valid_pixel_count;
    }
    double n = double(labelled.ids.size());
    acc.abs_rel /= n;
    acc.sq_rel /= n;
    acc.rmse /= n;
    acc.rmse_log /= n;
    acc.a1 /= n;
    acc.a2 /= n;
    acc.a3 /= n;
    return acc;
}

}  // namespace depthadapt
