// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Heavier training-based criteria run last.

#include <Eigen/Dense>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "avbf/metrics.hpp"
#include "avbf/net.hpp"
#include "avbf/solver.hpp"
#include "avbf/synth.hpp"
#include "avbf/tensor_file.hpp"
#include "avbf/trainer.hpp"
#include "oracles.hpp"

using namespace avbf;

namespace {

struct Criterion {
    int id;
    std::string name;
    std::function<bool(std::string&)> run;
};

bool extents_match(const std::vector<int>& shape, int a, int b, int channels) {
    if (shape.size() != 3 || shape[2] != channels) return false;
    return (shape[0] == a && shape[1] == b) || (shape[0] == b && shape[1] == a);
}

// ---------------------------------------------------------------- criterion 1

bool check_architecture_shapes(std::string& detail) {
    NetConfig config;  // paper scale
    AvNet netw = AvNet::init(config, 1);
    net::Tape tape;
    const auto bound = netw.bind(tape);

    Rng rng(2);
    VideoInput video;
    video.pixels.resize(128, 128);
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x) video.pixels(y, x) = rng.uniform();
    AudioWindow audio;
    audio.mode = ContextMode::NonCausal;
    audio.data.resize(kMfbBands, kNonCausalWindow);
    for (int r = 0; r < audio.data.rows(); ++r)
        for (int c = 0; c < audio.data.cols(); ++c) audio.data(r, c) = rng.normal();

    AvNet::ForwardTrace trace;
    const auto ids = netw.forward_sample(tape, bound, video, audio, &trace);

    const std::vector<std::vector<int>> table1 = {
        {63, 63, 64}, {31, 31, 128}, {15, 15, 128}, {7, 7, 256}, {3, 3, 256}, {1, 1, 256}};
    if (trace.video_shapes != table1) {
        detail = "video stack does not match the printed output column";
        return false;
    }
    const bool audio_ok = trace.audio_shapes.size() == 4 &&
                          extents_match(trace.audio_shapes[0], 19, 10, 32) &&
                          extents_match(trace.audio_shapes[1], 17, 8, 64) &&
                          extents_match(trace.audio_shapes[2], 15, 6, 64) &&
                          extents_match(trace.audio_shapes[3], 13, 4, 64);
    if (!audio_ok) {
        detail = "audio stack does not match the printed output column";
        return false;
    }
    if (tape.shape(ids.e_a) != std::vector<int>{256} || tape.shape(ids.e_v) != std::vector<int>{256}) {
        detail = "embeddings are not 256-dimensional";
        return false;
    }

    // causal variant: first conv stride 1x1 on the 40x11 window
    NetConfig causal_cfg;
    causal_cfg.causal = true;
    AvNet causal_net = AvNet::init(causal_cfg, 1);
    net::Tape causal_tape;
    const auto causal_bound = causal_net.bind(causal_tape);
    AudioWindow causal_audio;
    causal_audio.mode = ContextMode::Causal;
    causal_audio.data = audio.data.leftCols(kCausalWindow).eval();
    AvNet::ForwardTrace causal_trace;
    causal_net.forward_sample(causal_tape, causal_bound, video, causal_audio, &causal_trace);
    const bool causal_ok = causal_trace.audio_shapes.size() == 4 &&
                           extents_match(causal_trace.audio_shapes[0], 38, 9, 32) &&
                           extents_match(causal_trace.audio_shapes[1], 36, 7, 64) &&
                           extents_match(causal_trace.audio_shapes[2], 34, 5, 64) &&
                           extents_match(causal_trace.audio_shapes[3], 32, 3, 64);
    if (!causal_ok) {
        detail = "causal audio stack shapes wrong";
        return false;
    }
    detail = "all Table 1/Table 2 output cells reproduced";
    return true;
}

// ---------------------------------------------------------------- criterion 2

bool check_gradients(std::string& detail) {
    SynthConfig sc;
    sc.seed = 7;
    sc.vertices = 120;
    sc.frames = 8;
    sc.n_sequences = 1;
    sc.image_resolution = 32;
    sc.landmarks = 12;
    const SynthDataset data = generate_dataset(sc);

    NetConfig nc;
    nc.scale_factor = 4;  // resolution 32, channels /4
    nc.landmark_count = 12;
    AvNet netw = AvNet::init(nc, 11);

    // Differencing needs a well-conditioned point. Biases init to zero and
    // the splat background is exactly zero, which parks pre-activations on
    // the ReLU kink; raw init also sends the landmark projection into a
    // violently curved region where central differences pick up truncation
    // error. Damp the weights and jitter the biases into general position.
    {
        Rng jitter(99);
        for (auto& [name, tensor] : netw.named_parameters()) {
            if (name.back() == 'b')
                for (auto& v : tensor->v) v = jitter.uniform(-0.05, 0.05);
            else
                for (auto& v : tensor->v) v *= 0.25;
        }
    }

    std::vector<SequenceSample> batch = {make_sample(data, 0, 3, false)};
    const LossWeights weights;

    auto params = netw.named_parameters();
    auto eval = [&](bool with_grad) {
        net::Tape tape;
        const auto bound = netw.bind(tape);
        net::Tape::NodeId total = -1;
        const LossBreakdown loss = build_losses(tape, netw, bound, batch, BatchMode::AudioVisual,
                                                weights, data.model, data.camera, &total);
        if (with_grad) {
            netw.zero_grads();
            tape.backward(total);
        }
        return loss.total;
    };

    // >= 100 sampled entries per layer type: every tensor gets 60 samples,
    // and each layer type (video conv, audio conv, dense, heads) spans at
    // least two tensors. Epsilon 1e-7: a forward pass of this size always
    // holds a few pre-activations within 1e-5 of the ReLU kink, and a
    // difference that straddles a kink disagrees with the (correct)
    // one-sided derivative; at 1e-7 the collision set is empty while double
    // precision keeps the difference quotient accurate.
    const auto report = net::gradient_check(params, eval, 60, 1e-7, 13);
    std::ostringstream ss;
    ss << "max relative error " << report.max_rel_error << " over " << report.entries_checked
       << " sampled parameters";
    detail = ss.str();
    return report.max_rel_error < 1e-4;
}

// ---------------------------------------------------------------- criterion 3

bool check_solver_optimality(std::string& detail) {
    Rng rng(20260810);
    double worst_gap = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto inst = avbf::testing::make_solver_instance(rng, 20, 5);

        // monotone sweep descent, asserted on every instance
        double previous = std::numeric_limits<double>::infinity();
        for (int sweeps = 1; sweeps <= 10; ++sweeps) {
            const FitResult r = solve_coefficients(inst.model, inst.pose, inst.obs, nullptr,
                                                   nullptr, inst.weights, inst.x_init, sweeps, 0.0);
            if (r.objective > previous * (1.0 + 1e-12) + 1e-15) {
                detail = "objective increased across sweeps on instance " + std::to_string(trial);
                return false;
            }
            previous = r.objective;
        }

        const FitResult r = solve_coefficients(inst.model, inst.pose, inst.obs, nullptr, nullptr,
                                               inst.weights, inst.x_init, 5000, 1e-13);
        Eigen::MatrixXd d;
        Eigen::VectorXd c;
        avbf::testing::instance_system(inst, d, c);
        const Eigen::VectorXd oracle = avbf::testing::projected_gradient_oracle(inst, d, c);
        const double gap = std::abs(avbf::testing::instance_objective(inst, d, c, r.x.x) -
                                    avbf::testing::instance_objective(inst, d, c, oracle));
        worst_gap = std::max(worst_gap, gap);
        if (gap >= 1e-6) {
            detail = "objective gap " + std::to_string(gap) + " on instance " + std::to_string(trial);
            return false;
        }
    }
    std::ostringstream ss;
    ss << "50 instances, worst objective gap " << worst_gap;
    detail = ss.str();
    return true;
}

// ---------------------------------------------------------------- criterion 4

double pose_rotation_error(const Eigen::Matrix<double, 6, 1>& fit,
                           const Eigen::Matrix<double, 6, 1>& truth) {
    HeadPose a, b;
    a.rotation = fit.head<3>();
    b.rotation = truth.head<3>();
    const Eigen::Matrix3d rel = a.rotation_matrix() * b.rotation_matrix().transpose();
    return std::abs(Eigen::AngleAxisd(rel).angle());
}

bool round_trip_case(double sigma_depth, double mae_budget, std::string& detail) {
    SynthConfig sc;
    sc.seed = 31;
    sc.vertices = 420;
    sc.frames = 100;
    sc.n_sequences = 1;
    sc.image_resolution = 32;
    sc.landmarks = 16;
    sc.sigma_depth = sigma_depth;
    const SynthDataset data = generate_dataset(sc);
    const SynthSequence& seq = data.sequences[0];

    std::vector<std::pair<DepthObservation, LandmarkObservation>> frames;
    for (int t = 0; t < seq.frames(); ++t)
        frames.emplace_back(seq.depth[static_cast<size_t>(t)],
                            seq.landmarks[static_cast<size_t>(t)]);

    const FitWeights weights;  // defaults: depth 1.0, landmark 0.001, l1 0.05
    const auto results = fit_sequence(data.model, frames, data.camera, weights);

    double coeff_err = 0.0, rot_err = 0.0;
    for (int t = 0; t < seq.frames(); ++t) {
        const FitResult& r = results[static_cast<size_t>(t)];
        if (!r.error.empty()) {
            detail = "frame " + std::to_string(t) + " failed: " + r.error;
            return false;
        }
        coeff_err += (r.x.x - seq.coeffs.row(t).transpose()).cwiseAbs().mean();
        Eigen::Matrix<double, 6, 1> fit_pose;
        fit_pose << r.pose.rotation, r.pose.translation;
        rot_err += pose_rotation_error(fit_pose, seq.pose.row(t).transpose());
    }
    coeff_err /= seq.frames();
    rot_err /= seq.frames();

    std::ostringstream ss;
    ss << "sigma_d=" << sigma_depth << ": mean |dx| " << coeff_err << " (budget " << mae_budget
       << "), mean rotation error " << rot_err << " rad";
    detail = ss.str();
    if (sigma_depth == 0.0 && rot_err > 1e-3) return false;
    return coeff_err <= mae_budget;
}

bool check_round_trip(std::string& detail) {
    std::string clean, noisy;
    const bool ok_clean = round_trip_case(0.0, 0.02, clean);
    const bool ok_noisy = round_trip_case(0.005, 0.05, noisy);
    detail = clean + "; " + noisy;
    return ok_clean && ok_noisy;
}

// ---------------------------------------------------------------- criterion 6

bool check_loss_masking(std::string& detail) {
    SynthConfig sc;
    sc.seed = 41;
    sc.vertices = 100;
    sc.frames = 12;
    sc.n_sequences = 1;
    sc.image_resolution = 16;
    sc.landmarks = 8;
    const SynthDataset data = generate_dataset(sc);

    NetConfig nc;
    nc.scale_factor = 8;
    nc.landmark_count = 8;
    AvNet netw = AvNet::init(nc, 17);

    std::vector<SequenceSample> batch;
    for (int f = 1; f <= 4; ++f) batch.push_back(make_sample(data, 0, f, false));
    apply_modality_dropout(batch, BatchMode::AudioOnly);

    net::Tape tape;
    const auto bound = netw.bind(tape);
    net::Tape::NodeId total = -1;
    const LossBreakdown loss = build_losses(tape, netw, bound, batch, BatchMode::AudioOnly,
                                            LossWeights{}, data.model, data.camera, &total);
    if (loss.l3 != 0.0 || loss.l4 != 0.0 || loss.l5 != 0.0 || loss.l6 != 0.0) {
        detail = "losses 3-6 not exactly zero in audio-only mode";
        return false;
    }
    netw.zero_grads();
    tape.backward(total);
    for (auto& [name, tensor] : netw.named_parameters()) {
        if (name.rfind("head.xv.", 0) == 0 || name.rfind("head.pose.", 0) == 0) {
            for (double g : tensor->g)
                if (g != 0.0) {
                    detail = "non-zero gradient in " + name;
                    return false;
                }
        }
    }
    detail = "losses 3-6 exactly zero; x_v and pose head gradients bitwise zero";
    return true;
}

// ---------------------------------------------------------------- criterion 7

bool check_dropout_distribution(std::string& detail) {
    const int n = 100000;
    for (double p_audio : {0.25, 0.4, 0.5}) {
        const DropoutPolicy policy{p_audio, 0.5};
        Rng rng(90210);
        int video = 0, audio = 0, av = 0;
        for (int i = 0; i < n; ++i) {
            switch (sample_modality_mode(policy, rng)) {
                case BatchMode::VideoOnly: ++video; break;
                case BatchMode::AudioOnly: ++audio; break;
                case BatchMode::AudioVisual: ++av; break;
            }
        }
        auto outside = [n](int count, double p) {
            const double sigma = std::sqrt(std::max(1e-12, p * (1.0 - p) * n));
            return std::abs(count - p * n) > 3.0 * sigma;
        };
        if (outside(video, p_audio) || outside(audio, 0.5) || outside(av, 0.5 - p_audio)) {
            std::ostringstream ss;
            ss << "policy (" << p_audio << ", 0.5): frequencies (" << video << ", " << audio << ", "
               << av << ") outside 3-sigma bounds";
            detail = ss.str();
            return false;
        }
        if (p_audio == 0.5 && av != 0) {
            detail = "policy (0.5, 0.5) produced audiovisual batches";
            return false;
        }
    }
    detail = "all three policies inside 3-sigma bounds; (0.5,0.5) gave zero audiovisual batches";
    return true;
}

// ---------------------------------------------------------------- criterion 8

bool check_determinism(std::string& detail) {
    SynthConfig sc;
    sc.seed = 51;
    sc.vertices = 100;
    sc.frames = 24;
    sc.n_sequences = 2;
    sc.image_resolution = 16;
    sc.landmarks = 8;
    const SynthDataset data = generate_dataset(sc);

    TrainConfig tc;
    tc.net.scale_factor = 8;
    tc.net.landmark_count = 8;
    tc.iterations = 30;
    tc.batch_size = 4;
    tc.holdout_sequences = 0;
    tc.seed = 4242;
    tc.dropout = {0.4, 0.5};

    std::ostringstream log1, log2;
    AvNet n1 = train(tc, data, &log1);
    AvNet n2 = train(tc, data, &log2);
    if (log1.str() != log2.str()) {
        detail = "metric logs differ between identical runs";
        return false;
    }
    const std::string p1 = "accept_ckpt_a.avbf", p2 = "accept_ckpt_b.avbf";
    save_checkpoint(n1, p1);
    save_checkpoint(n2, p2);
    const bool same = file_checksum(p1) == file_checksum(p2);
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
    detail = same ? "bit-identical loss logs and checkpoint files"
                  : "checkpoint files differ between identical runs";
    return same;
}

// ------------------------------------------------------- criteria 5 and 9

struct TrainedPair {
    AvNet first;
    AvNet second;
};

SynthConfig accept_synth_config(std::uint64_t seed, int audio_lag) {
    SynthConfig sc;
    sc.seed = 1000 + seed;
    sc.vertices = 200;
    sc.frames = 240;
    sc.n_sequences = 6;
    sc.image_resolution = 16;
    sc.landmarks = 16;
    sc.av_redundancy = 0.8;
    sc.audio_lag = audio_lag;
    return sc;
}

TrainConfig accept_train_config(std::uint64_t seed) {
    TrainConfig tc;
    tc.net.scale_factor = 8;
    tc.net.landmark_count = 16;
    tc.learning_rate = 1e-3;
    tc.batch_size = 16;
    tc.iterations = 10000;
    tc.holdout_sequences = 2;
    tc.seed = seed;
    return tc;
}

bool check_dropout_effect(std::string& detail) {
    int wins = 0;
    std::ostringstream ss;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const SynthDataset data = generate_dataset(accept_synth_config(seed, 0));
        TrainConfig tc = accept_train_config(seed);

        tc.dropout = {0.4, 0.5};
        AvNet with_dropout = train(tc, data, nullptr);
        tc.dropout = {0.0, 0.0};
        AvNet without = train(tc, data, nullptr);

        const int holdout_start = static_cast<int>(data.sequences.size()) - tc.holdout_sequences;
        const ModeReport rd = evaluate_net(with_dropout, data, BatchMode::AudioOnly, holdout_start);
        const ModeReport rn = evaluate_net(without, data, BatchMode::AudioOnly, holdout_start);

        const double er_d = rd.coefficient_energy_ratio[0];
        const double er_n = rn.coefficient_energy_ratio[0];
        const bool win = er_d >= 2.0 * er_n && rd.closure_recall > rn.closure_recall;
        wins += win;
        ss << "seed " << seed << ": energy " << er_d << " vs " << er_n << ", recall "
           << rd.closure_recall << " vs " << rn.closure_recall << (win ? " (win); " : " (loss); ");
    }
    ss << wins << "/5 seeds";
    detail = ss.str();
    return wins >= 4;
}

bool check_causal_context(std::string& detail) {
    int wins = 0;
    std::ostringstream ss;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const SynthDataset data = generate_dataset(accept_synth_config(seed, 2));
        TrainConfig tc = accept_train_config(seed);
        tc.dropout = {0.4, 0.5};

        tc.net.causal = false;
        AvNet noncausal = train(tc, data, nullptr);
        tc.net.causal = true;
        AvNet causal = train(tc, data, nullptr);

        const int holdout_start = static_cast<int>(data.sequences.size()) - tc.holdout_sequences;
        const ModeReport rn = evaluate_net(noncausal, data, BatchMode::AudioOnly, holdout_start);
        const ModeReport rc = evaluate_net(causal, data, BatchMode::AudioOnly, holdout_start);

        const bool win = rn.speech_mse <= rc.speech_mse;
        wins += win;
        ss << "seed " << seed << ": non-causal " << rn.speech_mse << " vs causal " << rc.speech_mse
           << (win ? " (win); " : " (loss); ");
    }
    ss << wins << "/5 seeds";
    detail = ss.str();
    return wins >= 4;
}

}  // namespace

int main(int argc, char** argv) {
    // optional filter: run only the criteria whose ids are listed
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

    const std::vector<Criterion> criteria = {
        {1, "architecture shape conformance (Tables 1-2 at paper scale)", check_architecture_shapes},
        {2, "end-to-end gradient correctness (desk scale, double precision)", check_gradients},
        {3, "solver optimality vs projected-gradient oracle (50 instances)", check_solver_optimality},
        {4, "ground-truth round trip (noise-free and sigma_d=0.005)", check_round_trip},
        {6, "loss masking (audio-only zeroes losses 3-6 and head gradients)", check_loss_masking},
        {7, "dropout sampling distribution (3 policies, 1e5 draws)", check_dropout_distribution},
        {8, "training determinism (bit-identical logs and checkpoints)", check_determinism},
        {5, "modality-dropout effect (audio-only energy ratio and recall)", check_dropout_effect},
        {9, "causal vs non-causal context (lagged audio)", check_causal_context},
    };

    int failures = 0;
    for (const Criterion& criterion : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), criterion.id) == only.end())
            continue;
        const auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = criterion.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] criterion %d: %s (%.1f s) - %s\n", ok ? "PASS" : "FAIL", criterion.id,
                    criterion.name.c_str(), secs, detail.c_str());
        std::fflush(stdout);
        failures += !ok;
    }
    if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
    return failures;
}
