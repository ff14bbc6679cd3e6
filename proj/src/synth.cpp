#include "avbf/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "avbf/tensor_file.hpp"

namespace avbf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const Eigen::Vector3d kHeadCenter(0.0, 0.0, 4.0);
// Distinct axes: a near-spherical head makes the point-plane system almost
// rotation-blind (radial normals put rotations about the center in the
// nullspace), which starves both ICP and the pose labels.
const Eigen::Vector3d kHeadScale(1.0, 1.35, 0.75);

}  // namespace

void SynthConfig::validate() const {
    if (vertices < 8) throw InvalidArgument("synth: need at least 8 vertices");
    if (k_speech < 1 || k_nonspeech < 1) throw InvalidArgument("synth: need speech and non-speech shapes");
    if (landmarks < 1 || landmarks > vertices) throw InvalidArgument("synth: bad landmark count");
    if (frames < 2) throw InvalidArgument("synth: need at least 2 frames");
    if (n_sequences < 0) throw InvalidArgument("synth: negative sequence count");
    if (closure_rate < 0.0) throw InvalidArgument("synth: negative closure rate");
    if (av_redundancy < 0.0 || av_redundancy > 1.0) throw InvalidArgument("synth: rho must be in [0,1]");
    if (sigma_depth < 0.0 || sigma_landmark < 0.0 || sigma_audio < 0.0)
        throw InvalidArgument("synth: negative noise level");
    if (image_resolution < 8) throw InvalidArgument("synth: image resolution too small");
    if (depth_keep_fraction <= 0.0 || depth_keep_fraction > 1.0)
        throw InvalidArgument("synth: depth keep fraction must be in (0,1]");
}

std::string synth_config_to_json(const SynthConfig& c) {
    json doc;
    doc["seed"] = c.seed;
    doc["vertices"] = c.vertices;
    doc["k_speech"] = c.k_speech;
    doc["k_nonspeech"] = c.k_nonspeech;
    doc["landmarks"] = c.landmarks;
    doc["frames"] = c.frames;
    doc["n_sequences"] = c.n_sequences;
    doc["closure_rate"] = c.closure_rate;
    doc["av_redundancy"] = c.av_redundancy;
    doc["sigma_depth"] = c.sigma_depth;
    doc["sigma_landmark"] = c.sigma_landmark;
    doc["sigma_audio"] = c.sigma_audio;
    doc["audio_lag"] = c.audio_lag;
    doc["image_resolution"] = c.image_resolution;
    doc["depth_keep_fraction"] = c.depth_keep_fraction;
    return doc.dump(1);
}

SynthConfig synth_config_from_json(const std::string& text) {
    SynthConfig c;
    json doc;
    try {
        doc = json::parse(text);
        if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
        if (doc.contains("vertices")) c.vertices = doc["vertices"].get<int>();
        if (doc.contains("k_speech")) c.k_speech = doc["k_speech"].get<int>();
        if (doc.contains("k_nonspeech")) c.k_nonspeech = doc["k_nonspeech"].get<int>();
        if (doc.contains("landmarks")) c.landmarks = doc["landmarks"].get<int>();
        if (doc.contains("frames")) c.frames = doc["frames"].get<int>();
        if (doc.contains("n_sequences")) c.n_sequences = doc["n_sequences"].get<int>();
        if (doc.contains("closure_rate")) c.closure_rate = doc["closure_rate"].get<double>();
        if (doc.contains("av_redundancy")) c.av_redundancy = doc["av_redundancy"].get<double>();
        if (doc.contains("sigma_depth")) c.sigma_depth = doc["sigma_depth"].get<double>();
        if (doc.contains("sigma_landmark")) c.sigma_landmark = doc["sigma_landmark"].get<double>();
        if (doc.contains("sigma_audio")) c.sigma_audio = doc["sigma_audio"].get<double>();
        if (doc.contains("audio_lag")) c.audio_lag = doc["audio_lag"].get<int>();
        if (doc.contains("image_resolution")) c.image_resolution = doc["image_resolution"].get<int>();
        if (doc.contains("depth_keep_fraction"))
            c.depth_keep_fraction = doc["depth_keep_fraction"].get<double>();
    } catch (const json::exception& e) {
        throw BadFormatError(std::string("synth config: ") + e.what());
    }
    c.validate();
    return c;
}

Camera synth_camera(const SynthConfig& config) {
    Camera cam;
    const double res = config.image_resolution;
    cam.focal = {0.85 * res, 0.85 * res};
    cam.principal_point = {res / 2.0, res / 2.0};
    cam.image_size = {res, res};
    cam.validate();
    return cam;
}

namespace {

/// Deterministic quasi-uniform sphere directions (Fibonacci lattice).
Eigen::MatrixX3d sphere_directions(int count) {
    Eigen::MatrixX3d dirs(count, 3);
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
        const double y = 1.0 - 2.0 * (i + 0.5) / count;
        const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double theta = golden * i;
        dirs.row(i) << r * std::cos(theta), y, r * std::sin(theta);
    }
    return dirs;
}

}  // namespace

Eigen::MatrixX3d model_neutral_normals(const SynthConfig& config) {
    const Eigen::MatrixX3d dirs = sphere_directions(config.vertices);
    Eigen::MatrixX3d normals(config.vertices, 3);
    for (int i = 0; i < config.vertices; ++i) {
        // Ellipsoid surface normal: direction divided componentwise by the scale.
        Eigen::Vector3d n = dirs.row(i).transpose().cwiseQuotient(kHeadScale);
        normals.row(i) = n.normalized();
    }
    return normals;
}

BlendshapeModel generate_model(const SynthConfig& config) {
    config.validate();
    Rng rng(Rng::derive_seed(config.seed, 1));

    BlendshapeModel model;
    model.name = "synthetic-head-" + std::to_string(config.seed);
    const int v = config.vertices;
    const Eigen::MatrixX3d dirs = sphere_directions(v);
    model.neutral.resize(v, 3);
    for (int i = 0; i < v; ++i)
        model.neutral.row(i) = (kHeadCenter + kHeadScale.cwiseProduct(dirs.row(i).transpose())).transpose();

    // Static nose: a radial protrusion on the front face. Gives the depth
    // cloud and the rendered image an asymmetric feature that moves with
    // the pose.
    {
        int nose_center = 0;
        for (int i = 1; i < v; ++i)
            if (model.neutral(i, 2) < model.neutral(nose_center, 2)) nose_center = i;
        const Eigen::Vector3d nc = model.neutral.row(nose_center);
        for (int i = 0; i < v; ++i) {
            const double dist = (model.neutral.row(i).transpose() - nc).norm();
            const double bump = 0.3 * std::exp(-dist * dist / (2.0 * 0.35 * 0.35));
            model.neutral.row(i) += bump * dirs.row(i);
        }
    }

    const Eigen::MatrixX3d normals = model_neutral_normals(config);
    const int k = config.total_coefficients();
    model.deltas = Eigen::MatrixXd::Zero(3 * v, k);

    // Candidate centers: mouth region (bottom front) for speech shapes,
    // brow region (top front) for non-speech shapes.
    std::vector<int> mouth_pool, brow_pool;
    for (int i = 0; i < v; ++i) {
        const bool front = model.neutral(i, 2) < kHeadCenter.z();
        if (front && model.neutral(i, 1) < -0.15) mouth_pool.push_back(i);
        if (front && model.neutral(i, 1) > 0.25) brow_pool.push_back(i);
    }
    if (mouth_pool.empty() || brow_pool.empty())
        throw InvalidArgument("synth: too few vertices to place blendshape regions");

    // Jaw-open center: lowest front vertex.
    int jaw_center = mouth_pool.front();
    for (int i : mouth_pool)
        if (model.neutral(i, 1) < model.neutral(jaw_center, 1)) jaw_center = i;

    // Keep bump centers apart: overlapping columns make the coefficient
    // solve badly conditioned and let expressions mimic small rigid motions.
    std::vector<int> chosen = {jaw_center};
    auto pick_center = [&](std::vector<int>& pool) {
        double min_separation = 0.5;
        for (int attempt = 0;; ++attempt) {
            const auto at = static_cast<size_t>(rng.uniform_index(pool.size()));
            const int idx = pool[at];
            bool far_enough = true;
            for (int other : chosen)
                if ((model.neutral.row(idx) - model.neutral.row(other)).norm() < min_separation)
                    far_enough = false;
            if (far_enough || attempt > 50) {
                pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(at));
                chosen.push_back(idx);
                return idx;
            }
            if (attempt > 0 && attempt % 10 == 0) min_separation *= 0.8;
        }
    };

    auto write_bump = [&](int shape, int center, const Eigen::Vector3d& dir, double magnitude,
                          double sigma) {
        const Eigen::Vector3d c = model.neutral.row(center);
        const double cutoff = 2.2 * sigma;
        for (int i = 0; i < v; ++i) {
            const double dist = (model.neutral.row(i).transpose() - c).norm();
            if (dist > cutoff) continue;
            const double w = magnitude * std::exp(-dist * dist / (2.0 * sigma * sigma));
            model.deltas.block<3, 1>(3 * i, shape) = w * dir;
        }
    };

    write_bump(0, jaw_center, Eigen::Vector3d(0.0, -1.0, 0.0), 0.55, 0.35);
    model.shape_names.push_back("jaw_open");
    model.roles.push_back(CoefficientRole::Speech);

    for (int s = 1; s < config.k_speech; ++s) {
        const int center = pick_center(mouth_pool);
        write_bump(s, center, normals.row(center), 0.5, 0.3);
        model.shape_names.push_back("mouth_" + std::to_string(s));
        model.roles.push_back(CoefficientRole::Speech);
    }
    for (int s = 0; s < config.k_nonspeech; ++s) {
        const int center = pick_center(brow_pool);
        write_bump(config.k_speech + s, center, normals.row(center), 0.5, 0.3);
        model.shape_names.push_back("brow_" + std::to_string(s));
        model.roles.push_back(CoefficientRole::NonSpeech);
    }

    // Landmarks: spread over the front-most vertices.
    std::vector<int> order(static_cast<size_t>(v));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return model.neutral(a, 2) < model.neutral(b, 2); });
    const int pool = std::min(v, 3 * config.landmarks);
    for (int j = 0; j < config.landmarks; ++j)
        model.landmark_indices.push_back(order[static_cast<size_t>(j * pool / config.landmarks)]);

    model.validate();
    return model;
}

namespace {

/// Unit-variance smooth series: one-pole low-pass of white noise, scaled by
/// the stationary standard deviation. A 64-step burn-in decorrelates the
/// start from the zero initial state.
std::vector<double> smooth_noise(int frames, double alpha, Rng& rng) {
    const double stationary_sd = std::sqrt((1.0 - alpha) / (1.0 + alpha));
    double state = 0.0;
    for (int i = 0; i < 64; ++i) state = alpha * state + (1.0 - alpha) * rng.normal();
    std::vector<double> out(static_cast<size_t>(frames));
    for (int t = 0; t < frames; ++t) {
        state = alpha * state + (1.0 - alpha) * rng.normal();
        out[static_cast<size_t>(t)] = state / stationary_sd;
    }
    return out;
}

}  // namespace

Trajectory generate_trajectory(const SynthConfig& config, Rng& rng) {
    const int t_count = config.frames;
    const int k = config.total_coefficients();
    Trajectory traj;
    traj.coeffs.resize(t_count, k);
    traj.pose.resize(t_count, 6);
    traj.closure_active.assign(static_cast<size_t>(t_count), false);

    // Sequences start from the neutral expression and ease in over 20
    // frames, the way a capture session opens; frame 0 then matches the
    // identity-pose, zero-coefficient warm start of the offline fit.
    for (int j = 0; j < k; ++j) {
        const std::vector<double> s = smooth_noise(t_count, 0.9, rng);
        for (int t = 0; t < t_count; ++t) {
            const double ramp = std::min(1.0, t / 20.0);
            traj.coeffs(t, j) = ramp * std::clamp(0.5 + 0.55 * s[static_cast<size_t>(t)], 0.0, 1.0);
        }
    }

    // Closure events: geometric start draws with the per-frame probability
    // compensated for occupied frames so the expected count stays at
    // closure_rate per 100 frames. Durations 3..8 frames.
    if (config.closure_rate > 0.0) {
        const double rate = config.closure_rate / 100.0;
        const double mean_duration = 5.5;
        const double p_start = rate / std::max(1e-9, 1.0 - rate * mean_duration);
        int t = 0;
        while (t < t_count) {
            if (rng.uniform() < p_start) {
                const int duration = 3 + static_cast<int>(rng.uniform_index(6));
                const int end = std::min(t_count, t + duration);
                traj.closure_events.emplace_back(t, end);
                for (int f = t; f < end; ++f) {
                    traj.coeffs(f, 0) = 0.0;
                    traj.closure_active[static_cast<size_t>(f)] = true;
                }
                t = end;
            } else {
                ++t;
            }
        }
    }

    // Pose: bounded rotation walk about the head center, drifting translation.
    Eigen::Vector3d rot = Eigen::Vector3d::Zero();
    Eigen::Vector3d drift = Eigen::Vector3d::Zero();
    for (int t = 0; t < t_count; ++t) {
        if (t > 0) {
            for (int a = 0; a < 3; ++a) {
                rot[a] += 0.01 * rng.normal();
                drift[a] = 0.98 * drift[a] + 0.003 * rng.normal();
            }
            if (rot.norm() > 0.28) rot *= 0.28 / rot.norm();
        }
        HeadPose pose;
        pose.rotation = rot;
        // Rotation acts about the head center: v' = R (v - c) + c + drift.
        pose.translation = kHeadCenter + drift - pose.rotation_matrix() * kHeadCenter;
        traj.pose.row(t) << pose.rotation.transpose(), pose.translation.transpose();
    }
    return traj;
}

RenderedFrame render_observations(const BlendshapeModel& model,
                                  const Eigen::MatrixX3d& neutral_normals, const Coefficients& x,
                                  const HeadPose& pose, const SynthConfig& config,
                                  const Camera& camera, Rng& rng) {
    RenderedFrame frame;
    const Eigen::MatrixX3d posed = apply_pose(evaluate_mesh(model, x), pose);
    const Eigen::Matrix3d rot = pose.rotation_matrix();
    const int v = model.vertex_count();

    // Depth cloud: every vertex or a per-frame random subset.
    std::vector<int> kept;
    if (config.depth_keep_fraction >= 1.0) {
        kept.resize(static_cast<size_t>(v));
        std::iota(kept.begin(), kept.end(), 0);
    } else {
        for (int i = 0; i < v; ++i)
            if (rng.uniform() < config.depth_keep_fraction) kept.push_back(i);
        if (kept.empty()) kept.push_back(0);
    }
    const int n = static_cast<int>(kept.size());
    frame.depth.points.resize(n, 3);
    frame.depth.normals.resize(n, 3);
    for (int i = 0; i < n; ++i) {
        Eigen::Vector3d p = posed.row(kept[static_cast<size_t>(i)]);
        if (config.sigma_depth > 0.0)
            for (int c = 0; c < 3; ++c) p[c] += config.sigma_depth * rng.normal();
        frame.depth.points.row(i) = p;
        frame.depth.normals.row(i) =
            (rot * neutral_normals.row(kept[static_cast<size_t>(i)]).transpose()).transpose();
    }

    // Landmarks: projections plus pixel noise; out-of-bounds become invisible.
    const int j_count = model.landmark_count();
    frame.landmark_uv_raw.resize(j_count, 2);
    frame.landmarks.uv.resize(j_count, 2);
    frame.landmarks.visibility.assign(static_cast<size_t>(j_count), true);
    for (int j = 0; j < j_count; ++j) {
        const Eigen::Vector3d p = posed.row(model.landmark_indices[static_cast<size_t>(j)]);
        Eigen::Vector2d uv = project(p, camera);
        if (config.sigma_landmark > 0.0) {
            uv[0] += config.sigma_landmark * rng.normal();
            uv[1] += config.sigma_landmark * rng.normal();
        }
        frame.landmark_uv_raw.row(j) = uv.transpose();
        frame.landmarks.uv.row(j) = uv.transpose();
        if (uv[0] < 0.0 || uv[0] > camera.image_size[0] || uv[1] < 0.0 ||
            uv[1] > camera.image_size[1])
            frame.landmarks.visibility[static_cast<size_t>(j)] = false;
    }

    // Image: z-buffered point splat with Lambertian shading.
    const int res = config.image_resolution;
    Eigen::MatrixXd img = Eigen::MatrixXd::Zero(res, res);
    Eigen::MatrixXd zbuf = Eigen::MatrixXd::Constant(res, res, 1e30);
    const Eigen::Vector3d light = Eigen::Vector3d(-0.25, 0.35, -0.9).normalized();
    const int splat = std::max(1, res / 32);
    for (int i = 0; i < v; ++i) {
        const Eigen::Vector3d p = posed.row(i);
        if (!(p.z() > 0.0)) continue;
        const Eigen::Vector2d uv = project(p, camera);
        const int px = static_cast<int>(std::lround(uv[0]));
        const int py = static_cast<int>(std::lround(uv[1]));
        const Eigen::Vector3d n = rot * neutral_normals.row(i).transpose();
        const double shade = std::clamp(n.dot(light), 0.15, 1.0);
        for (int dy = -splat; dy <= splat; ++dy) {
            for (int dx = -splat; dx <= splat; ++dx) {
                const int xx = px + dx, yy = py + dy;
                if (xx < 0 || xx >= res || yy < 0 || yy >= res) continue;
                if (p.z() < zbuf(yy, xx)) {
                    zbuf(yy, xx) = p.z();
                    img(yy, xx) = shade;
                }
            }
        }
    }
    frame.image.pixels = img;
    return frame;
}

Eigen::MatrixXd audio_mixing_matrix(const SynthConfig& config) {
    Rng rng(Rng::derive_seed(config.seed, 2));
    Eigen::MatrixXd a(kMfbBands, config.k_speech);
    const double gain = 1.2 / std::sqrt(static_cast<double>(config.k_speech));
    for (int r = 0; r < kMfbBands; ++r)
        for (int c = 0; c < config.k_speech; ++c) a(r, c) = gain * rng.normal();
    return a;
}

std::vector<MfbFrame> synth_audio(const Eigen::MatrixXd& x_speech,
                                  const std::vector<bool>& closure_active,
                                  const SynthConfig& config, Rng& rng) {
    const int t_count = static_cast<int>(x_speech.rows());
    if (x_speech.cols() != config.k_speech)
        throw InvalidArgument("synth_audio: x_speech must have k_speech columns");
    if (static_cast<int>(closure_active.size()) != t_count)
        throw InvalidArgument("synth_audio: closure flags must match frame count");

    const Eigen::MatrixXd mixing = audio_mixing_matrix(config);
    const double rho = config.av_redundancy;

    // Nuisance: one smooth level shared by all bands plus smooth per-band
    // wander. The global component is deliberately the same order of
    // magnitude as the closure attenuation so that at rho = 0 the closure
    // channel is only partially recoverable.
    const std::vector<double> global_level = smooth_noise(t_count, 0.95, rng);
    std::vector<std::vector<double>> band_level(kMfbBands);
    for (int b = 0; b < kMfbBands; ++b) band_level[static_cast<size_t>(b)] = smooth_noise(t_count, 0.9, rng);
    const double global_sd = 2.5;
    const double band_sd = 0.4;

    std::vector<MfbFrame> out(static_cast<size_t>(t_count));
    for (int t = 0; t < t_count; ++t) {
        const int src = std::clamp(t - config.audio_lag, 0, t_count - 1);
        const Eigen::VectorXd centered =
            x_speech.row(src).transpose() - Eigen::VectorXd::Constant(config.k_speech, 0.5);
        const Eigen::VectorXd base = (mixing * centered).array().tanh();
        MfbFrame& frame = out[static_cast<size_t>(t)];
        frame.timestamp = t;
        const double attenuation = closure_active[static_cast<size_t>(src)] ? -2.0 : 0.0;
        for (int b = 0; b < kMfbBands; ++b) {
            double value = rho * base[b];
            value += (1.0 - rho) * (global_sd * global_level[static_cast<size_t>(t)] +
                                    band_sd * band_level[static_cast<size_t>(b)][static_cast<size_t>(t)]);
            value += config.sigma_audio * rng.normal();
            value += attenuation;
            frame.values[b] = value;
        }
    }
    return out;
}

SynthSequence generate_sequence(const SynthConfig& config, const BlendshapeModel& model,
                                const Camera& camera, int sequence_index) {
    Rng rng(Rng::derive_seed(config.seed, 100 + static_cast<std::uint64_t>(sequence_index)));
    const Eigen::MatrixX3d normals = model_neutral_normals(config);

    SynthSequence seq;
    Trajectory traj = generate_trajectory(config, rng);
    seq.coeffs = traj.coeffs;
    seq.pose = traj.pose;
    seq.closure_events = traj.closure_events;

    for (int t = 0; t < config.frames; ++t) {
        Coefficients x(traj.coeffs.row(t).transpose());
        HeadPose pose;
        pose.rotation = traj.pose.row(t).head<3>();
        pose.translation = traj.pose.row(t).tail<3>();
        RenderedFrame frame = render_observations(model, normals, x, pose, config, camera, rng);
        seq.depth.push_back(std::move(frame.depth));
        seq.landmarks.push_back(std::move(frame.landmarks));
        seq.landmark_uv.push_back(std::move(frame.landmark_uv_raw));
        seq.images.push_back(std::move(frame.image));
    }

    seq.mfb = synth_audio(traj.coeffs.leftCols(config.k_speech), traj.closure_active, config, rng);
    return seq;
}

SynthDataset generate_dataset(const SynthConfig& config) {
    config.validate();
    SynthDataset dataset;
    dataset.config = config;
    dataset.model = generate_model(config);
    dataset.camera = synth_camera(config);
    for (int i = 0; i < config.n_sequences; ++i)
        dataset.sequences.push_back(generate_sequence(config, dataset.model, dataset.camera, i));
    return dataset;
}

namespace {

std::string seq_dir_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "seq_%04d", index);
    return buf;
}

TensorData matrix_tensor(const Eigen::MatrixXd& m) {
    std::vector<double> values;
    values.reserve(static_cast<size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) values.push_back(m(r, c));
    return TensorData::from_f64({m.rows(), m.cols()}, std::move(values));
}

Eigen::MatrixXd tensor_matrix(const TensorData& t, const std::string& what) {
    if (t.extents.size() != 2) throw BadFormatError(what + ": expected a rank-2 tensor");
    const auto values = t.as_f64();
    Eigen::MatrixXd m(t.extents[0], t.extents[1]);
    size_t idx = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = values[idx++];
    return m;
}

}  // namespace

void write_dataset(const SynthDataset& dataset, const std::string& dir) {
    fs::create_directories(dir);
    save_model_json(dataset.model, (fs::path(dir) / "model.json").string());

    json manifest;
    manifest["config"] = json::parse(synth_config_to_json(dataset.config));
    manifest["camera"] = {{"focal", {dataset.camera.focal[0], dataset.camera.focal[1]}},
                          {"principal_point",
                           {dataset.camera.principal_point[0], dataset.camera.principal_point[1]}},
                          {"image_size", {dataset.camera.image_size[0], dataset.camera.image_size[1]}}};
    manifest["n_sequences"] = dataset.sequences.size();
    manifest["frames_per_sequence"] = dataset.config.frames;
    manifest["total_frames"] = dataset.sequences.size() * static_cast<size_t>(dataset.config.frames);

    json sequences = json::array();
    for (size_t i = 0; i < dataset.sequences.size(); ++i) {
        const SynthSequence& seq = dataset.sequences[i];
        const std::string name = seq_dir_name(static_cast<int>(i));
        const fs::path seq_path = fs::path(dir) / name;
        fs::create_directories(seq_path);

        const int t_count = seq.frames();
        write_tensor_file(matrix_tensor(seq.coeffs), (seq_path / "coeffs.bin").string());
        write_tensor_file(matrix_tensor(seq.pose), (seq_path / "pose.bin").string());

        // depth.bin: T x N x 6 (xyz point, xyz normal); N fixed per sequence.
        const int n = seq.depth.front().size();
        std::vector<double> depth_values;
        depth_values.reserve(static_cast<size_t>(t_count) * n * 6);
        for (const DepthObservation& obs : seq.depth) {
            if (obs.size() != n)
                throw InvalidArgument("write_dataset: depth cloud size varies within a sequence");
            for (int i2 = 0; i2 < n; ++i2) {
                for (int c = 0; c < 3; ++c) depth_values.push_back(obs.points(i2, c));
                for (int c = 0; c < 3; ++c) depth_values.push_back(obs.normals(i2, c));
            }
        }
        write_tensor_file(TensorData::from_f64({t_count, n, 6}, std::move(depth_values)),
                          (seq_path / "depth.bin").string());

        const int j_count = static_cast<int>(seq.landmark_uv.front().rows());
        std::vector<double> lm_values;
        lm_values.reserve(static_cast<size_t>(t_count) * j_count * 2);
        for (const auto& uv : seq.landmark_uv)
            for (int j = 0; j < j_count; ++j) {
                lm_values.push_back(uv(j, 0));
                lm_values.push_back(uv(j, 1));
            }
        write_tensor_file(TensorData::from_f64({t_count, j_count, 2}, std::move(lm_values)),
                          (seq_path / "landmarks.bin").string());

        const int res = dataset.config.image_resolution;
        std::vector<float> img_values;
        img_values.reserve(static_cast<size_t>(t_count) * res * res);
        for (const VideoInput& img : seq.images)
            for (int y = 0; y < res; ++y)
                for (int x = 0; x < res; ++x) img_values.push_back(static_cast<float>(img.pixels(y, x)));
        write_tensor_file(TensorData::from_f32({t_count, res, res}, std::move(img_values)),
                          (seq_path / "images.bin").string());

        std::vector<double> mfb_values;
        mfb_values.reserve(static_cast<size_t>(t_count) * kMfbBands);
        for (const MfbFrame& frame : seq.mfb)
            for (int b = 0; b < kMfbBands; ++b) mfb_values.push_back(frame.values[b]);
        write_tensor_file(TensorData::from_f64({t_count, kMfbBands}, std::move(mfb_values)),
                          (seq_path / "mfb.bin").string());

        json entry;
        entry["dir"] = name;
        entry["frames"] = t_count;
        json checksums;
        for (const char* file :
             {"coeffs.bin", "pose.bin", "depth.bin", "landmarks.bin", "images.bin", "mfb.bin"})
            checksums[file] = file_checksum((seq_path / file).string());
        entry["checksums"] = checksums;
        json events = json::array();
        for (const auto& [start, end] : seq.closure_events) events.push_back({start, end});
        entry["closure_events"] = events;
        sequences.push_back(entry);
    }
    manifest["sequences"] = sequences;

    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir);
    out << manifest.dump(1) << "\n";
}

SynthDataset load_dataset(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw IoError("cannot open dataset manifest in " + dir);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw BadFormatError(dir + "/manifest.json: " + e.what());
    }

    SynthDataset dataset;
    dataset.config = synth_config_from_json(manifest.at("config").dump());
    dataset.model = load_model_json((fs::path(dir) / "model.json").string());
    const auto& cam = manifest.at("camera");
    dataset.camera.focal = {cam.at("focal")[0].get<double>(), cam.at("focal")[1].get<double>()};
    dataset.camera.principal_point = {cam.at("principal_point")[0].get<double>(),
                                      cam.at("principal_point")[1].get<double>()};
    dataset.camera.image_size = {cam.at("image_size")[0].get<double>(),
                                 cam.at("image_size")[1].get<double>()};
    dataset.camera.validate();

    for (const auto& entry : manifest.at("sequences")) {
        const fs::path seq_path = fs::path(dir) / entry.at("dir").get<std::string>();
        SynthSequence seq;
        seq.coeffs = tensor_matrix(read_tensor_file((seq_path / "coeffs.bin").string()), "coeffs");
        seq.pose = tensor_matrix(read_tensor_file((seq_path / "pose.bin").string()), "pose");

        const TensorData depth = read_tensor_file((seq_path / "depth.bin").string());
        if (depth.extents.size() != 3 || depth.extents[2] != 6)
            throw BadFormatError("depth.bin: expected T x N x 6");
        const auto dvals = depth.as_f64();
        const int t_count = static_cast<int>(depth.extents[0]);
        const int n = static_cast<int>(depth.extents[1]);
        for (int t = 0; t < t_count; ++t) {
            DepthObservation obs;
            obs.points.resize(n, 3);
            obs.normals.resize(n, 3);
            for (int i = 0; i < n; ++i) {
                const size_t base = (static_cast<size_t>(t) * n + i) * 6;
                for (int c = 0; c < 3; ++c) obs.points(i, c) = dvals[base + static_cast<size_t>(c)];
                for (int c = 0; c < 3; ++c) obs.normals(i, c) = dvals[base + 3 + static_cast<size_t>(c)];
            }
            seq.depth.push_back(std::move(obs));
        }

        const TensorData lm = read_tensor_file((seq_path / "landmarks.bin").string());
        if (lm.extents.size() != 3 || lm.extents[2] != 2)
            throw BadFormatError("landmarks.bin: expected T x J x 2");
        const auto lvals = lm.as_f64();
        const int j_count = static_cast<int>(lm.extents[1]);
        for (int t = 0; t < t_count; ++t) {
            Eigen::MatrixX2d uv(j_count, 2);
            LandmarkObservation obs;
            obs.uv.resize(j_count, 2);
            obs.visibility.assign(static_cast<size_t>(j_count), true);
            for (int j = 0; j < j_count; ++j) {
                const size_t base = (static_cast<size_t>(t) * j_count + j) * 2;
                uv(j, 0) = lvals[base];
                uv(j, 1) = lvals[base + 1];
                obs.uv(j, 0) = uv(j, 0);
                obs.uv(j, 1) = uv(j, 1);
                if (uv(j, 0) < 0.0 || uv(j, 0) > dataset.camera.image_size[0] || uv(j, 1) < 0.0 ||
                    uv(j, 1) > dataset.camera.image_size[1])
                    obs.visibility[static_cast<size_t>(j)] = false;
            }
            seq.landmark_uv.push_back(std::move(uv));
            seq.landmarks.push_back(std::move(obs));
        }

        const TensorData images = read_tensor_file((seq_path / "images.bin").string());
        if (images.extents.size() != 3) throw BadFormatError("images.bin: expected T x H x W");
        const auto ivals = images.as_f64();
        const int res = static_cast<int>(images.extents[1]);
        for (int t = 0; t < t_count; ++t) {
            VideoInput img;
            img.pixels.resize(res, res);
            for (int y = 0; y < res; ++y)
                for (int x = 0; x < res; ++x)
                    img.pixels(y, x) =
                        ivals[(static_cast<size_t>(t) * res + y) * static_cast<size_t>(res) + x];
            seq.images.push_back(std::move(img));
        }

        const TensorData mfb = read_tensor_file((seq_path / "mfb.bin").string());
        if (mfb.extents.size() != 2 || mfb.extents[1] != kMfbBands)
            throw BadFormatError("mfb.bin: expected T x 40");
        const auto mvals = mfb.as_f64();
        for (int t = 0; t < t_count; ++t) {
            MfbFrame frame;
            frame.timestamp = t;
            for (int b = 0; b < kMfbBands; ++b)
                frame.values[b] = mvals[static_cast<size_t>(t) * kMfbBands + b];
            seq.mfb.push_back(frame);
        }

        if (entry.contains("closure_events"))
            for (const auto& ev : entry["closure_events"])
                seq.closure_events.emplace_back(ev[0].get<int>(), ev[1].get<int>());

        dataset.sequences.push_back(std::move(seq));
    }
    return dataset;
}

}  // namespace avbf
