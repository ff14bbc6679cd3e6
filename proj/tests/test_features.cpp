#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "avbf/features.hpp"
#include "avbf/rng.hpp"

using namespace avbf;

TEST_CASE("mel filterbank: silence hits the log floor everywhere") {
    MelFilterbank mel;
    const MfbFrame frame = mel.apply(std::vector<double>(400, 0.0));
    for (int b = 0; b < kMfbBands; ++b) CHECK(frame.values[b] == doctest::Approx(std::log(1e-10)));
}

TEST_CASE("mel filterbank: 1 kHz tone peaks at the filter centered nearest 1 kHz") {
    MelFilterbank mel;
    std::vector<double> tone(400);
    for (int i = 0; i < 400; ++i) tone[i] = std::sin(2.0 * M_PI * 1000.0 * i / 16000.0);
    const MfbFrame frame = mel.apply(tone);

    int argmax = 0;
    for (int b = 1; b < kMfbBands; ++b)
        if (frame.values[b] > frame.values[argmax]) argmax = b;

    // Oracle: recompute the triangular filter centers from the Mel spacing
    // formula and find the one nearest 1 kHz.
    auto hz_to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    const double top = hz_to_mel(8000.0);
    int nearest = 0;
    double best = 1e18;
    for (int b = 0; b < kMfbBands; ++b) {
        const double center = mel_to_hz(top * (b + 1) / (kMfbBands + 1));
        if (std::abs(center - 1000.0) < best) {
            best = std::abs(center - 1000.0);
            nearest = b;
        }
    }
    CHECK(argmax == nearest);
}

TEST_CASE("mel filterbank: deterministic on identical input") {
    MelFilterbank mel;
    Rng rng(5);
    std::vector<double> noise(400);
    for (auto& s : noise) s = rng.normal();
    const MfbFrame a = mel.apply(noise);
    const MfbFrame b = mel.apply(noise);
    for (int i = 0; i < kMfbBands; ++i) CHECK(a.values[i] == b.values[i]);
}

TEST_CASE("mel filterbank: wrong sample count is rejected") {
    MelFilterbank mel;
    CHECK_THROWS_AS(mel.apply(std::vector<double>(399, 0.0)), InvalidArgument);
}

TEST_CASE("mel filterbank: frame-by-frame equals batch processing") {
    MelFilterbank mel;
    Rng rng(9);
    std::vector<double> signal(400 + 160 * 5);
    for (auto& s : signal) s = rng.normal();
    const std::vector<MfbFrame> batch = mel.process(signal);
    REQUIRE(batch.size() == 6);
    for (size_t t = 0; t < batch.size(); ++t) {
        std::vector<double> frame(signal.begin() + static_cast<long>(t) * 160,
                                  signal.begin() + static_cast<long>(t) * 160 + 400);
        const MfbFrame single = mel.apply(frame, static_cast<int>(t));
        for (int b = 0; b < kMfbBands; ++b) CHECK(single.values[b] == batch[t].values[b]);
    }
}

namespace {

std::vector<MfbFrame> ramp_stream(int n) {
    std::vector<MfbFrame> stream(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t) {
        stream[static_cast<size_t>(t)].timestamp = t;
        for (int b = 0; b < kMfbBands; ++b)
            stream[static_cast<size_t>(t)].values[b] = t + 0.001 * b;
    }
    return stream;
}

}  // namespace

TEST_CASE("stack_context: constant stream gives identical columns") {
    std::vector<MfbFrame> stream(5);
    for (auto& f : stream) f.values.setConstant(3.25);
    const AudioWindow w = stack_context(stream, 2, ContextMode::NonCausal);
    CHECK(w.data.rows() == kMfbBands);
    CHECK(w.data.cols() == 21);
    CHECK((w.data.array() == 3.25).all());
}

TEST_CASE("stack_context: t=0 non-causal edge replicates the first frame") {
    const auto stream = ramp_stream(40);
    const AudioWindow w = stack_context(stream, 0, ContextMode::NonCausal);
    REQUIRE(w.data.cols() == 21);
    for (int c = 0; c <= 10; ++c) CHECK(w.data(0, c) == stream[0].values[0]);
    for (int c = 11; c < 21; ++c) CHECK(w.data(0, c) == stream[static_cast<size_t>(c - 10)].values[0]);
}

TEST_CASE("stack_context: causal window is frames t-10..t in order") {
    const auto stream = ramp_stream(60);
    const int t = 30;
    const AudioWindow w = stack_context(stream, t, ContextMode::Causal);
    REQUIRE(w.data.cols() == 11);
    for (int c = 0; c < 11; ++c)
        for (int b = 0; b < kMfbBands; ++b)
            CHECK(w.data(b, c) == stream[static_cast<size_t>(t - 10 + c)].values[b]);
}

TEST_CASE("stack_context: widths are exact at every position including edges") {
    const auto stream = ramp_stream(25);
    for (int t = 0; t < 25; ++t) {
        CHECK(stack_context(stream, t, ContextMode::NonCausal).data.cols() == 21);
        CHECK(stack_context(stream, t, ContextMode::Causal).data.cols() == 11);
    }
}

TEST_CASE("stack_context: causal windows never reference the future") {
    const auto stream = ramp_stream(50);
    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        const int t = static_cast<int>(rng.uniform_index(50));
        const AudioWindow w = stack_context(stream, t, ContextMode::Causal);
        // Band 0 of frame f carries the value f exactly.
        for (int c = 0; c < 11; ++c) CHECK(w.data(0, c) <= static_cast<double>(t));
    }
}

TEST_CASE("stack_context: empty stream is rejected") {
    CHECK_THROWS_AS(stack_context({}, 0, ContextMode::Causal), InvalidArgument);
}

TEST_CASE("normalize_image: 8-bit scaling endpoints and mid-level") {
    const int res = 4;
    SUBCASE("all 255 maps to 1.0") {
        const VideoInput img = normalize_image(std::vector<std::uint8_t>(16, 255), res, res, res);
        CHECK((img.pixels.array() == 1.0).all());
    }
    SUBCASE("all 0 maps to 0.0") {
        const VideoInput img = normalize_image(std::vector<std::uint8_t>(16, 0), res, res, res);
        CHECK((img.pixels.array() == 0.0).all());
    }
    SUBCASE("two-level image") {
        std::vector<std::uint8_t> raw(16, 0);
        raw[5] = 128;
        const VideoInput img = normalize_image(raw, res, res, res);
        CHECK(img.pixels(1, 1) == doctest::Approx(128.0 / 255.0));
        CHECK(img.pixels(0, 0) == 0.0);
    }
}

TEST_CASE("normalize_image: shape mismatch is rejected") {
    CHECK_THROWS_AS(normalize_image(std::vector<std::uint8_t>(12, 0), 3, 4, 4), InvalidArgument);
    CHECK_THROWS_AS(normalize_image(Eigen::MatrixXd::Zero(3, 4), 4), InvalidArgument);
}

TEST_CASE("nearest_mfb_index pairs 60 fps video with 100 fps features") {
    // video frame 3 is at 50 ms; the 100 fps feature stream has a frame every 10 ms.
    CHECK(nearest_mfb_index(3, 60.0, 100.0, 1000) == 5);
    CHECK(nearest_mfb_index(0, 60.0, 100.0, 1000) == 0);
    CHECK(nearest_mfb_index(999, 60.0, 100.0, 10) == 9);  // clamped to the stream
}

TEST_CASE("WAV 16k mono round trip") {
    Rng rng(21);
    std::vector<double> samples(1600);
    for (auto& s : samples) s = 0.8 * std::sin(rng.uniform() * 2.0 * M_PI);
    const std::string path = "test_roundtrip.wav";
    save_wav_16k_mono(samples, path);
    const std::vector<double> back = load_wav_16k_mono(path);
    REQUIRE(back.size() == samples.size());
    for (size_t i = 0; i < samples.size(); ++i) CHECK(std::abs(back[i] - samples[i]) < 1.0 / 32000.0);
    std::remove(path.c_str());
}
