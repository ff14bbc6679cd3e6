#include <doctest.h>

#include <Eigen/Dense>

#include <cstdio>
#include <fstream>

#include "avbf/net.hpp"
#include "avbf/rng.hpp"

using namespace avbf;
using net::Tape;
using net::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.v) v = scale * rng.normal();
    return t;
}

VideoInput random_video(int res, Rng& rng) {
    VideoInput v;
    v.pixels.resize(res, res);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) v.pixels(y, x) = rng.uniform();
    return v;
}

AudioWindow random_audio(bool causal, Rng& rng) {
    AudioWindow a;
    a.mode = causal ? ContextMode::Causal : ContextMode::NonCausal;
    a.data.resize(kMfbBands, causal ? kCausalWindow : kNonCausalWindow);
    for (int r = 0; r < a.data.rows(); ++r)
        for (int c = 0; c < a.data.cols(); ++c) a.data(r, c) = rng.normal();
    return a;
}

/// Unordered {a,b} equality: Table 2 prints the audio conv outputs in the
/// transposed orientation, so spatial extents are compared as sets.
bool extents_match(const std::vector<int>& shape, int a, int b, int channels) {
    if (shape.size() != 3 || shape[2] != channels) return false;
    return (shape[0] == a && shape[1] == b) || (shape[0] == b && shape[1] == a);
}

}  // namespace

TEST_CASE("conv2d shape: 128x128 image, 3x3 kernel, stride 2 -> 63x63x64") {
    Tape tape;
    Rng rng(1);
    Tensor w = random_tensor({3, 3, 1, 64}, rng, 0.1);
    Tensor b = Tensor({64});
    std::vector<double> img(128 * 128, 0.5);
    const auto x = tape.constant({128, 128, 1}, img);
    const auto y = tape.conv2d_valid(x, tape.parameter(w), tape.parameter(b), 2, 2);
    CHECK(tape.shape(y) == std::vector<int>{63, 63, 64});
}

TEST_CASE("conv2d shape: 40x21 audio window, stride 2 -> extents {19,10} x 32") {
    Tape tape;
    Rng rng(2);
    Tensor w = random_tensor({3, 3, 1, 32}, rng, 0.1);
    Tensor b = Tensor({32});
    std::vector<double> win(40 * 21, 0.0);
    const auto x = tape.constant({40, 21, 1}, win);
    const auto y = tape.conv2d_valid(x, tape.parameter(w), tape.parameter(b), 2, 2);
    CHECK(extents_match(tape.shape(y), 19, 10, 32));
}

TEST_CASE("conv2d: 1x1 identity kernel at stride 1 reproduces the input") {
    Tape tape;
    Rng rng(3);
    Tensor w({1, 1, 2, 2});
    w.v = {1.0, 0.0, 0.0, 1.0};  // identity across the 2 channels
    Tensor b = Tensor({2});
    std::vector<double> data(5 * 4 * 2);
    for (auto& v : data) v = rng.normal();
    const auto x = tape.constant({5, 4, 2}, data);
    const auto y = tape.conv2d_valid(x, tape.parameter(w), tape.parameter(b), 1, 1);
    REQUIRE(tape.shape(y) == std::vector<int>{5, 4, 2});
    const auto out = tape.value(y);
    for (size_t i = 0; i < data.size(); ++i) CHECK(out[i] == doctest::Approx(data[i]).epsilon(1e-15));
}

TEST_CASE("conv2d: kernel larger than input is rejected") {
    Tape tape;
    Rng rng(4);
    Tensor w = random_tensor({3, 3, 1, 4}, rng);
    Tensor b = Tensor({4});
    std::vector<double> data(2 * 2, 0.0);
    const auto x = tape.constant({2, 2, 1}, data);
    CHECK_THROWS_AS(tape.conv2d_valid(x, tape.parameter(w), tape.parameter(b), 1, 1),
                    InvalidArgument);
}

TEST_CASE("video encoder at paper scale matches every Table 1 output cell") {
    NetConfig config;  // paper scale defaults
    AvNet netw = AvNet::init(config, 99);
    Tape tape;
    const auto bound = netw.bind(tape);
    Rng rng(5);
    AvNet::ForwardTrace trace;
    netw.forward_sample(tape, bound, random_video(128, rng), random_audio(false, rng), &trace);

    const std::vector<std::vector<int>> expected = {
        {63, 63, 64}, {31, 31, 128}, {15, 15, 128}, {7, 7, 256}, {3, 3, 256}, {1, 1, 256}};
    REQUIRE(trace.video_shapes.size() == expected.size());
    for (size_t i = 0; i < expected.size(); ++i) CHECK(trace.video_shapes[i] == expected[i]);
}

TEST_CASE("audio encoder at paper scale matches Table 2, both orientations") {
    NetConfig config;
    AvNet netw = AvNet::init(config, 99);
    Tape tape;
    const auto bound = netw.bind(tape);
    Rng rng(6);
    AvNet::ForwardTrace trace;
    const auto ids =
        netw.forward_sample(tape, bound, random_video(128, rng), random_audio(false, rng), &trace);

    REQUIRE(trace.audio_shapes.size() == 4);
    CHECK(extents_match(trace.audio_shapes[0], 19, 10, 32));
    CHECK(extents_match(trace.audio_shapes[1], 17, 8, 64));
    CHECK(extents_match(trace.audio_shapes[2], 15, 6, 64));
    CHECK(extents_match(trace.audio_shapes[3], 13, 4, 64));
    CHECK(tape.shape(ids.e_a) == std::vector<int>{256});
    CHECK(tape.shape(ids.e_v) == std::vector<int>{256});
}

TEST_CASE("causal audio encoder: first stride drops to 1x1, shapes follow") {
    NetConfig config;
    config.causal = true;
    AvNet netw = AvNet::init(config, 99);
    Tape tape;
    const auto bound = netw.bind(tape);
    Rng rng(7);
    AvNet::ForwardTrace trace;
    netw.forward_sample(tape, bound, random_video(128, rng), random_audio(true, rng), &trace);

    REQUIRE(trace.audio_shapes.size() == 4);
    CHECK(extents_match(trace.audio_shapes[0], 38, 9, 32));
    CHECK(extents_match(trace.audio_shapes[1], 36, 7, 64));
    CHECK(extents_match(trace.audio_shapes[2], 34, 5, 64));
    CHECK(extents_match(trace.audio_shapes[3], 32, 3, 64));
}

TEST_CASE("window width and causal flag must agree") {
    NetConfig config;
    AvNet netw = AvNet::init(config, 1);
    Tape tape;
    const auto bound = netw.bind(tape);
    Rng rng(8);
    CHECK_THROWS_AS(
        netw.forward_sample(tape, bound, random_video(128, rng), random_audio(true, rng)),
        InvalidArgument);
}

TEST_CASE("zero inputs with zero biases give zero embeddings and outputs") {
    NetConfig config;
    config.scale_factor = 4;  // desk scale keeps this cheap
    AvNet netw = AvNet::init(config, 11);  // biases init to zero
    Tape tape;
    const auto bound = netw.bind(tape);
    VideoInput video;
    video.pixels = Eigen::MatrixXd::Zero(config.resolution(), config.resolution());
    AudioWindow audio;
    audio.mode = ContextMode::NonCausal;
    audio.data = Eigen::MatrixXd::Zero(kMfbBands, kNonCausalWindow);
    const auto ids = netw.forward_sample(tape, bound, video, audio);
    for (double v : tape.value(ids.e_v)) CHECK(v == 0.0);
    for (double v : tape.value(ids.e_a)) CHECK(v == 0.0);
    for (double v : tape.value(ids.x_av)) CHECK(v == 0.0);
    for (double v : tape.value(ids.x_v)) CHECK(v == 0.0);
    for (double v : tape.value(ids.pose)) CHECK(v == 0.0);
}

TEST_CASE("forward is deterministic bit-for-bit") {
    NetConfig config;
    config.scale_factor = 8;
    AvNet netw = AvNet::init(config, 13);
    Rng rng(14);
    const VideoInput video = random_video(config.resolution(), rng);
    const AudioWindow audio = random_audio(false, rng);
    const auto out1 = netw.forward({{video, audio}});
    const auto out2 = netw.forward({{video, audio}});
    CHECK(out1[0].x_av == out2[0].x_av);
    CHECK(out1[0].x_v == out2[0].x_v);
    CHECK(out1[0].pose == out2[0].pose);
}

TEST_CASE("fuse/heads: zero embeddings with zero bias give zeros; selector weights read one block") {
    Tape tape;
    Rng rng(15);
    const int ea = 4, ev = 3, ks = 2;
    Tensor w({ks, ea + ev});
    // selector: outputs read only the video block
    w.v = {0, 0, 0, 0, 1, 0, 0,
           0, 0, 0, 0, 0, 0, 1};
    Tensor b = Tensor({ks});

    std::vector<double> ea_val(ea, 0.0);
    std::vector<double> ev_val = {0.5, -0.25, 2.0};
    const auto e_a = tape.constant({ea}, ea_val);
    const auto e_v = tape.constant({ev}, ev_val);
    const auto fused = tape.concat(e_a, e_v);
    const auto x_av = tape.dense(fused, tape.parameter(w), tape.parameter(b));
    CHECK(tape.value(x_av)[0] == 0.5);
    CHECK(tape.value(x_av)[1] == 2.0);

    // zero embeddings + zero weights/bias -> zero output
    Tensor w0 = Tensor({ks, ea + ev});
    Tensor b0 = Tensor({ks});
    std::vector<double> zero_ev(ev, 0.0);
    const auto fused0 = tape.concat(tape.constant({ea}, ea_val), tape.constant({ev}, zero_ev));
    const auto out0 = tape.dense(fused0, tape.parameter(w0), tape.parameter(b0));
    for (double v : tape.value(out0)) CHECK(v == 0.0);
}

TEST_CASE("dense matches an independent matrix-vector oracle") {
    Tape tape;
    Rng rng(16);
    const int m = 5, n = 7;
    Tensor w = random_tensor({m, n}, rng);
    Tensor b = random_tensor({m}, rng);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    const auto y = tape.dense(tape.constant({n}, x), tape.parameter(w), tape.parameter(b));
    for (int i = 0; i < m; ++i) {
        double expected = b.v[static_cast<size_t>(i)];
        for (int j = 0; j < n; ++j) expected += w.v[static_cast<size_t>(i * n + j)] * x[static_cast<size_t>(j)];
        CHECK(tape.value(y)[static_cast<size_t>(i)] == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("pose head with zero weights returns its bias for any embedding") {
    Tape tape;
    Rng rng(17);
    Tensor w = Tensor({6, 8});
    Tensor b = random_tensor({6}, rng);
    std::vector<double> ev(8);
    for (auto& v : ev) v = rng.normal();
    const auto pose = tape.dense(tape.constant({8}, ev), tape.parameter(w), tape.parameter(b));
    for (int i = 0; i < 6; ++i) CHECK(tape.value(pose)[static_cast<size_t>(i)] == b.v[static_cast<size_t>(i)]);
}

TEST_CASE("batch forward equals per-sample forward and commutes with permutation") {
    NetConfig config;
    config.scale_factor = 8;
    AvNet netw = AvNet::init(config, 19);
    Rng rng(20);
    std::vector<std::pair<VideoInput, AudioWindow>> batch;
    for (int i = 0; i < 3; ++i)
        batch.emplace_back(random_video(config.resolution(), rng), random_audio(false, rng));

    const auto outs = netw.forward(batch);
    REQUIRE(outs.size() == 3);
    const auto single = netw.forward({batch[1]});
    CHECK(single[0].x_av == outs[1].x_av);

    std::vector<std::pair<VideoInput, AudioWindow>> permuted = {batch[2], batch[0], batch[1]};
    const auto pouts = netw.forward(permuted);
    CHECK(pouts[0].x_av == outs[2].x_av);
    CHECK(pouts[1].x_av == outs[0].x_av);
    CHECK(pouts[2].x_av == outs[1].x_av);

    CHECK(outs[0].x_av.size() == config.k_speech);
    CHECK(outs[0].x_v.size() == config.k_nonspeech);
    CHECK(outs[0].pose.size() == 6);
}

TEST_CASE("modality zeroing: with zeroed audio input, x_av ignores the original audio") {
    NetConfig config;
    config.scale_factor = 8;
    AvNet netw = AvNet::init(config, 23);
    Rng rng(24);
    const VideoInput video = random_video(config.resolution(), rng);
    AudioWindow a1 = random_audio(false, rng);
    AudioWindow a2 = random_audio(false, rng);
    a1.data.setZero();
    a2.data.setZero();
    const auto o1 = netw.forward({{video, a1}});
    const auto o2 = netw.forward({{video, a2}});
    CHECK(o1[0].x_av == o2[0].x_av);
}

namespace {

/// Shared scaffolding for per-op gradient checks: loss = mse(f(x), target).
double run_op_check(const std::function<Tape::NodeId(Tape&, std::vector<Tensor*>&)>& build,
                    std::uint64_t seed) {
    std::vector<Tensor*> params;
    Tape probe;
    build(probe, params);  // collects parameter pointers on the first run

    std::vector<std::pair<std::string, Tensor*>> named;
    for (size_t i = 0; i < params.size(); ++i) named.emplace_back("p" + std::to_string(i), params[i]);

    auto eval = [&](bool with_grad) {
        std::vector<Tensor*> ignored;
        Tape tape;
        const Tape::NodeId loss = build(tape, ignored);
        if (with_grad) tape.backward(loss);
        return tape.scalar(loss);
    };
    return net::gradient_check(named, eval, 40, 1e-6, seed).max_rel_error;
}

}  // namespace

TEST_CASE("gradient check: conv2d against central differences") {
    Rng init(31);
    Tensor w = random_tensor({3, 3, 2, 3}, init, 0.5);
    Tensor b = random_tensor({3}, init, 0.5);
    std::vector<double> x(7 * 6 * 2);
    for (auto& v : x) v = init.normal();
    std::vector<double> target(3 * 2 * 3);
    for (auto& v : target) v = init.normal();

    const double err = run_op_check(
        [&](Tape& tape, std::vector<Tensor*>& params) {
            params = {&w, &b};
            const auto y = tape.conv2d_valid(tape.constant({7, 6, 2}, x), tape.parameter(w),
                                             tape.parameter(b), 2, 2);
            return tape.mse(y, target);
        },
        101);
    CHECK(err < 1e-6);
}

TEST_CASE("gradient check: dense + relu + concat + slice + scatter") {
    Rng init(37);
    Tensor w1 = random_tensor({5, 4}, init, 0.7);
    Tensor b1 = random_tensor({5}, init, 0.3);
    Tensor w2 = random_tensor({4, 8}, init, 0.7);
    Tensor b2 = random_tensor({4}, init, 0.3);
    std::vector<double> x(4);
    for (auto& v : x) v = init.normal();
    std::vector<double> target(4);
    for (auto& v : target) v = init.normal();
    const std::vector<int> idx_a = {0, 2}, idx_b = {1, 3};

    const double err = run_op_check(
        [&](Tape& tape, std::vector<Tensor*>& params) {
            params = {&w1, &b1, &w2, &b2};
            const auto h = tape.relu(tape.dense(tape.constant({4}, x), tape.parameter(w1),
                                                tape.parameter(b1)));
            const auto h2 = tape.concat(h, tape.slice(h, 1, 3));
            const auto y = tape.dense(h2, tape.parameter(w2), tape.parameter(b2));
            const auto merged = tape.scatter_merge(tape.slice(y, 0, 2), tape.slice(y, 2, 2),
                                                   idx_a, idx_b);
            return tape.mse(merged, target);
        },
        102);
    CHECK(err < 1e-6);
}

TEST_CASE("gradient check: linear-only toy network is exact to 1e-8") {
    Rng init(41);
    Tensor w1 = random_tensor({6, 5}, init);
    Tensor b1 = random_tensor({6}, init);
    Tensor w2 = random_tensor({3, 6}, init);
    Tensor b2 = random_tensor({3}, init);
    std::vector<double> x(5);
    for (auto& v : x) v = init.normal();
    std::vector<double> target(3);
    for (auto& v : target) v = init.normal();

    // The loss is quadratic in every parameter, so central differences are
    // exact up to roundoff; a wide epsilon keeps the roundoff term small.
    std::vector<std::pair<std::string, Tensor*>> named = {
        {"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
    auto eval = [&](bool with_grad) {
        Tape tape;
        const auto h = tape.dense(tape.constant({5}, x), tape.parameter(w1), tape.parameter(b1));
        const auto y = tape.dense(h, tape.parameter(w2), tape.parameter(b2));
        const auto loss = tape.mse(y, target);
        if (with_grad) tape.backward(loss);
        return tape.scalar(loss);
    };
    const double err = net::gradient_check(named, eval, 40, 1e-3, 103).max_rel_error;
    CHECK(err < 1e-8);
}

TEST_CASE("gradient check: corrupted gradient is caught (negative control)") {
    Rng init(43);
    Tensor w = random_tensor({3, 3}, init);
    Tensor b = random_tensor({3}, init);
    std::vector<double> x(3);
    for (auto& v : x) v = init.normal();
    std::vector<double> target(3, 0.0);

    std::vector<std::pair<std::string, Tensor*>> named = {{"w", &w}, {"b", &b}};
    auto eval = [&](bool with_grad) {
        Tape tape;
        const auto y = tape.dense(tape.constant({3}, x), tape.parameter(w), tape.parameter(b));
        const auto loss = tape.mse(y, target);
        if (with_grad) {
            tape.backward(loss);
            for (auto& g : w.g) g += 0.5;  // deliberate corruption
        }
        return tape.scalar(loss);
    };
    const auto report = net::gradient_check(named, eval, 40, 1e-6, 104);
    CHECK(report.max_rel_error > 1e-2);
}

TEST_CASE("checkpoint round trip preserves every parameter bit") {
    NetConfig config;
    config.scale_factor = 8;
    config.causal = true;
    AvNet netw = AvNet::init(config, 47);
    const std::string path = "test_ckpt.avbf";
    save_checkpoint(netw, path);
    AvNet back = load_checkpoint(path);
    CHECK(back.config().causal == true);
    CHECK(back.config().scale_factor == 8);
    auto pa = netw.named_parameters();
    auto pb = back.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second->v == pb[i].second->v);
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects a bad magic") {
    const std::string path = "bad_ckpt.avbf";
    {
        std::ofstream out(path, std::ios::binary);
        out << "WHAT" << std::string(32, '\0');
    }
    CHECK_THROWS_AS(load_checkpoint(path), BadFormatError);
    std::remove(path.c_str());
}

TEST_CASE("desk-scale video stack stops when the spatial extent is exhausted") {
    NetConfig config;
    config.scale_factor = 4;  // resolution 32
    const auto plan = plan_video_stack(config);
    CHECK(plan.size() == 4);  // 32 -> 15 -> 7 -> 3 -> 1
    CHECK(plan.back().out_h == 1);
    CHECK(plan.back().out_w == 1);
    CHECK(video_embedding_dim(config) == plan.back().filters);
}
