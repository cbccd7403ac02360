#pragma once

#include "depthadapt/model.hpp"

namespace depthadapt {

struct UncertaintyScore {
    double value = 0.0;                  // mean over images of the per-image block sum
    size_t n_images = 0;
    std::vector<double> per_block_means; // per decoder block, averaged over images
};

namespace detail {

inline Image hflip(const Image& img) {
    Image out(img.h, img.w);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < img.h; ++r)
            for (int col = 0; col < img.w; ++col) out.at(c, r, col) = img.at(c, r, img.w - 1 - col);
    return out;
}

inline DepthMap hflip(const DepthMap& d) {
    DepthMap out(d.h, d.w);
    for (int r = 0; r < d.h; ++r)
        for (int c = 0; c < d.w; ++c) out.at(r, c) = d.at(r, d.w - 1 - c);
    return out;
}

}  // namespace detail

/// Label-free uncertainty: per image, the un-flipped prediction of the
/// horizontally flipped input serves as a fixed reference; the L1 against it
/// is backpropagated and the decoder-weight gradient magnitudes are averaged.
/// Parameters are never updated.
inline UncertaintyScore uncertainty_score(const DepthNet& net, const std::vector<Image>& images) {
    if (images.empty()) throw ArgumentError("uncertainty_score: empty image set");
    UncertaintyScore score;
    score.n_images = images.size();
    score.per_block_means.assign(net.decoder_block_indices().size(), 0.0);
    for (const auto& img : images) {
        DepthNet::Activations acts;
        DepthMap pred = net.forward(img, &acts);
        DepthMap reference = detail::hflip(net.predict(detail::hflip(img)));
        // d/dpred of mean |pred - reference|; the reference is a constant.
        DepthMap dpred(pred.h, pred.w, 0.f);
        const float inv_n = 1.f / float(pred.data.size());
        for (size_t i = 0; i < pred.data.size(); ++i) {
            float d = pred.data[i] - reference.data[i];
            dpred.data[i] = (d > 0.f ? inv_n : (d < 0.f ? -inv_n : 0.f));
        }
        GradBuffer grads = net.make_grad_buffer();
        net.backward(acts, dpred, grads);
        auto mags = net.decoder_gradient_magnitudes(grads);
        double img_sum = 0.0;
        for (size_t b = 0; b < mags.size(); ++b) {
            score.per_block_means[b] += mags[b];
            img_sum += mags[b];
        }
        score.value += img_sum;
    }
    score.value /= double(images.size());
    for (auto& v : score.per_block_means) v /= double(images.size());
    return score;
}

/// Argmin with first-wins tie-break.
inline size_t select_by_score(const std::vector<double>& scores) {
    if (scores.empty()) throw ArgumentError("select_by_score: no candidates");
    size_t best = 0;
    for (size_t i = 1; i < scores.size(); ++i)
        if (scores[i] < scores[best]) best = i;
    return best;
}

/// Scores each candidate net on the image set and returns the index of the
/// one with the smallest uncertainty.
inline size_t select_hyperparameters(const std::vector<const DepthNet*>& candidates,
                                     const std::vector<Image>& images) {
    if (candidates.empty()) throw ArgumentError("select_hyperparameters: no candidates");
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const auto* net : candidates) scores.push_back(uncertainty_score(*net, images).value);
    return select_by_score(scores);
}

}  // namespace depthadapt
