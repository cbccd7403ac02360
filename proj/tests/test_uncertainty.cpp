#include <doctest.h>

#include "depthadapt/uncertainty.hpp"

using namespace depthadapt;

namespace {

Image random_image(int h, int w, uint32_t seed) {
    Rng rng(seed);
    Image img(h, w);
    for (auto& v : img.data) v = urand(rng);
    return img;
}

std::vector<Image> image_set(int n, int h, int w, uint32_t seed) {
    std::vector<Image> out;
    for (int i = 0; i < n; ++i) out.push_back(random_image(h, w, seed + uint32_t(i)));
    return out;
}

}  // namespace

TEST_CASE("constant predictor has zero uncertainty") {
    ModelSpec spec{16, 16, 2, 3, 10.f};
    auto net = init_model(spec, 5);
    // Zeroing the head makes the output 0.5*max_depth everywhere, so the
    // prediction always matches its flipped reference exactly.
    auto* head = net.blocks().back();
    std::fill(head->w.begin(), head->w.end(), 0.f);
    std::fill(head->b.begin(), head->b.end(), 0.f);
    auto score = uncertainty_score(net, image_set(3, 16, 16, 40));
    CHECK(score.value == 0.0);
    CHECK(score.n_images == 3);
    for (double m : score.per_block_means) CHECK(m == 0.0);
}

TEST_CASE("untrained nets disagree with their flipped view") {
    ModelSpec spec{16, 16, 2, 3, 10.f};
    auto net = init_model(spec, 5);
    auto score = uncertainty_score(net, image_set(3, 16, 16, 40));
    CHECK(score.value > 0.0);
    CHECK(score.per_block_means.size() == net.decoder_block_indices().size());
    double sum = 0.0;
    for (double m : score.per_block_means) sum += m;
    CHECK(score.value == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("scoring is deterministic and never updates parameters") {
    ModelSpec spec{16, 16, 2, 3, 10.f};
    auto net = init_model(spec, 8);
    auto images = image_set(4, 16, 16, 11);
    uint64_t before = net.checksum();
    auto a = uncertainty_score(net, images);
    auto b = uncertainty_score(net, images);
    CHECK(net.checksum() == before);
    CHECK(a.value == b.value);
    CHECK(a.per_block_means == b.per_block_means);
}

TEST_CASE("score is invariant to image order") {
    ModelSpec spec{16, 16, 2, 3, 10.f};
    auto net = init_model(spec, 8);
    auto images = image_set(4, 16, 16, 11);
    auto a = uncertainty_score(net, images);
    std::swap(images[0], images[3]);
    std::swap(images[1], images[2]);
    auto b = uncertainty_score(net, images);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-12));
}

TEST_CASE("argmin selection with first-wins ties") {
    CHECK(select_by_score({216.83, 198.83, 219.29, 210.15, 170.73}) == 4);
    CHECK(select_by_score({1.0, 1.0, 2.0}) == 0);
    CHECK(select_by_score({3.0}) == 0);
    CHECK_THROWS_AS(select_by_score({}), ArgumentError);
}

TEST_CASE("hyperparameter selection picks the lowest-uncertainty candidate") {
    ModelSpec spec{16, 16, 2, 3, 10.f};
    auto noisy = init_model(spec, 3);
    auto constant = init_model(spec, 4);
    auto* head = constant.blocks().back();
    std::fill(head->w.begin(), head->w.end(), 0.f);
    std::fill(head->b.begin(), head->b.end(), 0.f);
    auto images = image_set(2, 16, 16, 21);
    CHECK(select_hyperparameters({&noisy, &constant}, images) == 1);
    CHECK(select_hyperparameters({&constant, &noisy}, images) == 0);
    CHECK_THROWS_AS(select_hyperparameters({}, images), ArgumentError);
    CHECK_THROWS_AS(uncertainty_score(noisy, {}), ArgumentError);
}
