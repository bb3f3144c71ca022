#include "doctest.h"

#include "syncvp/metrics.hpp"
#include "syncvp/toyworld.hpp"
#include "syncvp/triplane_codec.hpp"

#include <cmath>

using namespace syncvp;

namespace {

VideoClip random_clip(int T, int H, int W, Rng& rng) {
    VideoClip c = VideoClip::zeros(T, H, W, 1);
    for (double& v : c.data) v = rng.uniform(-1, 1);
    return c;
}

} // namespace

TEST_CASE("latent layout examples") {
    const LatentLayout big = latent_layout(8, 128, 128, 4, 4);
    CHECK(big.L == 1536);
    CHECK(big.channels == 4);
    CHECK(big.shape_s == PlaneShape{4, 32, 32});
    CHECK(big.shape_h == PlaneShape{4, 8, 32});
    CHECK(big.shape_w == PlaneShape{4, 8, 32});

    CHECK(latent_layout(8, 64, 64, 4, 4).L == 512);
    for (int P : {2, 4, 8}) CHECK(latent_layout(1, P, P, P, 3).L == 3);

    const LatentLayout toy = latent_layout(8, 32, 32, 4, 4);
    CHECK(toy.L == 192);
    CHECK(toy.plane_offsets() == std::array<Eigen::Index, 3>{0, 64, 128});
}

TEST_CASE("latent layout rejects bad geometry") {
    CHECK_THROWS_AS(latent_layout(8, 30, 32, 4, 4), GeometryError);
    CHECK_THROWS_AS(latent_layout(8, 32, 30, 4, 4), GeometryError);
    CHECK_THROWS_AS(latent_layout(0, 32, 32, 4, 4), GeometryError);
    CHECK_THROWS_AS(latent_layout(8, 32, 32, 0, 4), GeometryError);
    CHECK_THROWS_AS(latent_layout(8, 32, 32, 4, 0), GeometryError);
}

TEST_CASE("property: flattened length is the sum of plane token counts") {
    for (int T = 1; T <= 9; T += 2)
        for (int P : {2, 4, 8})
            for (int hm = 1; hm <= 5; ++hm)
                for (int wm = 1; wm <= 5; wm += 2) {
                    const LatentLayout l = latent_layout(T, hm * P, wm * P, P, 2);
                    CHECK(l.L == l.s_tokens + l.h_tokens + l.w_tokens);
                    CHECK(l.s_tokens == static_cast<Eigen::Index>(hm) * wm);
                    CHECK(l.h_tokens == static_cast<Eigen::Index>(T) * hm);
                    CHECK(l.w_tokens == static_cast<Eigen::Index>(T) * wm);
                }
}

TEST_CASE("video clip invariants") {
    VideoClip c = VideoClip::zeros(4, 8, 8, 1);
    CHECK_NOTHROW(c.validate());
    c.at(1, 2, 3) = 1.5;
    CHECK_THROWS_AS(c.validate(), DomainError);
    c.clamp();
    CHECK(c.at(1, 2, 3) == 1.0);
    c.at(0, 0, 0) = std::nan("");
    CHECK_THROWS(c.validate());

    VideoClip a = VideoClip::zeros(3, 4, 4, 1);
    a.at(2, 1, 1) = 0.5;
    const VideoClip tail = a.frames(1, 2);
    CHECK(tail.T == 2);
    CHECK(tail.at(1, 1, 1) == 0.5);
    VideoClip joined = a;
    joined.append(tail);
    CHECK(joined.T == 5);
    CHECK_THROWS(a.frames(2, 2));
}

TEST_CASE("test codec round trip, shape and injectivity") {
    const ClipGeometry g{2, 4, 4, 1}; // 32 pixels
    const TestCodec codec(g, 2, 8);   // L = 4 + 4 + 4 = 12, C'L = 96
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        VideoClip x = random_clip(2, 4, 4, rng);
        const TriplaneLatent z = codec.encode(x);
        CHECK(z.z.rows() == 8);
        CHECK(z.z.cols() == 12);
        const VideoClip y = codec.decode(z);
        double err = 0;
        for (size_t k = 0; k < x.size(); ++k) err = std::max(err, std::abs(x.data[k] - y.data[k]));
        CHECK(err <= 1e-5);

        VideoClip shifted = x;
        for (double& v : shifted.data) v = std::clamp(v + 0.05, -1.0, 1.0);
        CHECK((codec.encode(shifted).z - z.z).norm() > 1e-3);
    }
}

TEST_CASE("test codec needs enough latent capacity") {
    CHECK_THROWS_AS(TestCodec(ClipGeometry{8, 32, 32, 1}, 4, 4), GeometryError);
}

TEST_CASE("test codec rejects mismatched inputs") {
    const TestCodec codec(ClipGeometry{2, 4, 4, 1}, 2, 8);
    CHECK_THROWS_AS(codec.encode(VideoClip::zeros(2, 8, 8, 1)), GeometryError);
    CHECK_THROWS_AS(codec.decode(TriplaneLatent::zeros(latent_layout(2, 4, 4, 2, 4))), GeometryError);
}

TEST_CASE("decoding the zero latent gives a finite in-range clip") {
    const TestCodec test(ClipGeometry{2, 4, 4, 1}, 2, 8);
    const VideoClip a = test.decode(TriplaneLatent::zeros(test.layout()));
    CHECK_NOTHROW(a.validate());

    const TrainableCodec trained(CodecConfig{ClipGeometry{4, 16, 16, 1}, 4, 4, 16, 3});
    const VideoClip b = trained.decode(TriplaneLatent::zeros(trained.layout()));
    CHECK(b.T == 4);
    CHECK(b.H == 16);
    CHECK_NOTHROW(b.validate());
}

TEST_CASE("trainable codec: layout, determinism and modality tag") {
    const TrainableCodec codec(CodecConfig{ClipGeometry{4, 16, 16, 1}, 4, 4, 16, 3});
    Rng rng(2);
    const VideoClip x = random_clip(4, 16, 16, rng);
    const TriplaneLatent z1 = codec.encode(x), z2 = codec.encode(x);
    CHECK(z1.z.rows() == 4);
    CHECK(z1.z.cols() == latent_layout(4, 16, 16, 4, 4).L);
    CHECK(z1.z == z2.z); // bitwise
    CHECK(z1.z.allFinite());
    CHECK(codec.decode(z1, Modality::B).modality == Modality::B);
    CHECK_THROWS_AS(codec.encode(VideoClip::zeros(4, 32, 32, 1)), GeometryError);
}

TEST_CASE("train_codec: zero iterations leaves parameters untouched") {
    TrainableCodec codec(CodecConfig{ClipGeometry{4, 16, 16, 1}, 4, 4, 16, 3});
    const nn::ParamStore before = codec.params();
    const auto r = train_codec(codec, [](Rng& rng) { return random_clip(4, 16, 16, rng); }, {.iterations = 0});
    CHECK(r.losses.empty());
    auto now = codec.params().all();
    auto old = before.all();
    for (size_t i = 0; i < now.size(); ++i) CHECK(now[i]->value == old[i]->value);
}

TEST_CASE("train_codec reduces reconstruction loss on toy clips") {
    TrainableCodec codec(CodecConfig{ClipGeometry{4, 16, 16, 1}, 4, 4, 16, 3});
    WorldConfig w;
    w.T = 4;
    w.H = 16;
    w.W = 16;
    w.radius_min = 2;
    w.radius_max = 3;
    uint64_t next = 0;
    auto sample = [&](Rng&) { return generate_clip(split_seed(Split::Train, next++), w).a; };
    const auto r = train_codec(codec, sample, {.iterations = 150, .batch = 4, .lr = 3e-3, .lr_final = 1e-3});
    REQUIRE(r.losses.size() == 150);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += r.losses[static_cast<size_t>(i)];
        last += r.losses[r.losses.size() - 1 - static_cast<size_t>(i)];
    }
    CHECK(last < 0.5 * first);
}

TEST_CASE("train_codec aborts on a NaN loss") {
    TrainableCodec codec(CodecConfig{ClipGeometry{4, 16, 16, 1}, 4, 4, 16, 3});
    auto bad = [](Rng&) {
        VideoClip c = VideoClip::zeros(4, 16, 16, 1);
        c.data[5] = std::nan("");
        return c;
    };
    CHECK_THROWS_AS(train_codec(codec, bad, {.iterations = 3}), NumericalError);
}

TEST_CASE("latent scale calibration gives unit RMS latents") {
    TrainableCodec codec(CodecConfig{ClipGeometry{4, 16, 16, 1}, 4, 4, 16, 3});
    Rng rng(4);
    std::vector<VideoClip> clips;
    for (int i = 0; i < 6; ++i) clips.push_back(random_clip(4, 16, 16, rng));
    calibrate_latent_scale(codec, clips);
    double ss = 0;
    Eigen::Index n = 0;
    for (const TriplaneLatent& z : codec.encode_batch(clips)) {
        ss += z.z.squaredNorm();
        n += z.z.size();
    }
    CHECK(std::sqrt(ss / static_cast<double>(n)) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("cosine learning-rate schedule endpoints") {
    CHECK(cosine_lr(1e-3, 1e-4, 0, 100) == doctest::Approx(1e-3));
    CHECK(cosine_lr(1e-3, 1e-4, 99, 100) == doctest::Approx(1e-4));
    CHECK(cosine_lr(1e-3, 1e-4, 0, 1) == doctest::Approx(1e-3));
    const double mid = cosine_lr(1.0, 0.0, 50, 101);
    CHECK(mid == doctest::Approx(0.5));
}
