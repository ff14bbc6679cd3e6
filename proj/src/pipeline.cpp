#include "avbf/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

#include "avbf/metrics.hpp"
#include "avbf/net.hpp"
#include "avbf/solver.hpp"
#include "avbf/synth.hpp"
#include "avbf/trainer.hpp"

namespace avbf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

FitWeights load_fit_weights(const std::string& path, FitSchedule* schedule) {
    FitWeights w;
    if (path.empty()) return w;
    json doc;
    try {
        doc = json::parse(read_text_file(path));
        if (doc.contains("depth")) w.depth = doc["depth"].get<double>();
        if (doc.contains("landmark")) w.landmark = doc["landmark"].get<double>();
        if (doc.contains("l1")) w.l1 = doc["l1"].get<double>();
        if (schedule) {
            if (doc.contains("max_sweeps")) schedule->max_sweeps = doc["max_sweeps"].get<int>();
            if (doc.contains("tol")) schedule->tol = doc["tol"].get<double>();
            if (doc.contains("icp_max_iters")) schedule->icp_max_iters = doc["icp_max_iters"].get<int>();
            if (doc.contains("icp_tol")) schedule->icp_tol = doc["icp_tol"].get<double>();
        }
    } catch (const json::exception& e) {
        throw BadFormatError(path + ": " + e.what());
    }
    w.validate();
    return w;
}

}  // namespace

void cmd_synth(const std::string& config_path, std::optional<std::uint64_t> seed,
               const std::string& out_dir) {
    SynthConfig config;
    if (!config_path.empty()) config = synth_config_from_json(read_text_file(config_path));
    if (seed) config.seed = *seed;
    config.validate();
    const SynthDataset dataset = generate_dataset(config);
    write_dataset(dataset, out_dir);
}

void cmd_fit(const std::string& data_path, int sequence, const std::string& weights_path,
             const std::string& model_path, const std::string& out_csv) {
    FitSchedule schedule;
    const FitWeights weights = load_fit_weights(weights_path, &schedule);

    BlendshapeModel model;
    Camera camera;
    std::vector<std::pair<DepthObservation, LandmarkObservation>> frames;

    if (fs::is_directory(data_path)) {
        const SynthDataset dataset = load_dataset(data_path);
        if (sequence < 0 || sequence >= static_cast<int>(dataset.sequences.size()))
            throw InvalidArgument("fit: sequence index out of range");
        model = dataset.model;
        camera = dataset.camera;
        const SynthSequence& seq = dataset.sequences[static_cast<size_t>(sequence)];
        for (int t = 0; t < seq.frames(); ++t)
            frames.emplace_back(seq.depth[static_cast<size_t>(t)],
                                seq.landmarks[static_cast<size_t>(t)]);
    } else {
        if (model_path.empty())
            throw InvalidArgument("fit: observations JSON input needs a model file");
        model = load_model_json(model_path);
        ObservationSet set = load_observations_json(data_path);
        camera = set.camera;
        frames = std::move(set.frames);
    }

    const std::vector<FitResult> results = fit_sequence(model, frames, camera, weights, schedule);
    write_curves_csv(curves_from_results(results), out_csv);
}

void cmd_train(const std::string& config_path, const std::string& data_dir,
               std::optional<std::uint64_t> seed, std::optional<bool> causal,
               const std::string& out_dir) {
    TrainConfig config;
    if (!config_path.empty()) config = train_config_from_json(read_text_file(config_path));
    if (seed) config.seed = *seed;
    if (causal) config.net.causal = *causal;
    config.validate();

    const SynthDataset dataset = load_dataset(data_dir);
    if (config.net.k_speech != static_cast<int>(dataset.model.speech_indices().size()) ||
        config.net.k_nonspeech != static_cast<int>(dataset.model.nonspeech_indices().size()))
        throw InvalidArgument("train: net output dims do not match the dataset model partition");
    if (config.net.landmark_count != dataset.model.landmark_count())
        throw InvalidArgument("train: net landmark count does not match the dataset model");
    if (config.net.resolution() != dataset.config.image_resolution)
        throw InvalidArgument("train: net resolution " + std::to_string(config.net.resolution()) +
                              " does not match dataset images " +
                              std::to_string(dataset.config.image_resolution));

    fs::create_directories(out_dir);
    std::ofstream metrics(fs::path(out_dir) / "metrics.csv");
    if (!metrics) throw IoError("cannot write metrics.csv in " + out_dir);
    AvNet net = train(config, dataset, &metrics);
    save_checkpoint(net, (fs::path(out_dir) / "checkpoint.avbf").string());

    std::ofstream echo(fs::path(out_dir) / "train_config.json");
    echo << train_config_to_json(config) << "\n";
}

void cmd_infer(const std::string& checkpoint_path, const std::string& data_dir, int sequence,
               const std::string& mode, const std::string& out_csv) {
    AvNet net = load_checkpoint(checkpoint_path);
    const SynthDataset dataset = load_dataset(data_dir);
    const CurveTable curves = infer_sequence(net, dataset, sequence, batch_mode_from_string(mode));
    write_curves_csv(curves, out_csv);
}

std::string cmd_eval(const std::vector<std::string>& checkpoint_paths, const std::string& data_dir,
                     const std::vector<std::string>& modes, int holdout,
                     const std::string& out_dir) {
    const SynthDataset dataset = load_dataset(data_dir);
    std::vector<BatchMode> parsed_modes;
    for (const std::string& m : modes) parsed_modes.push_back(batch_mode_from_string(m));
    const EvalReport report = ablation_report(checkpoint_paths, dataset, parsed_modes, holdout);

    fs::create_directories(out_dir);
    write_eval_csv(report, (fs::path(out_dir) / "eval.csv").string());
    const std::string summary = eval_summary(report);
    std::ofstream out(fs::path(out_dir) / "summary.txt");
    if (!out) throw IoError("cannot write summary.txt in " + out_dir);
    out << summary;
    return summary;
}

void cmd_export(const std::string& model_path, const std::string& curves_path,
                const std::string& out_dir) {
    const BlendshapeModel model = load_model_json(model_path);
    const CurveTable curves = read_curves_csv(curves_path);
    if (curves.coefficient_count() != model.coefficient_count())
        throw InvalidArgument("export: curves have " + std::to_string(curves.coefficient_count()) +
                              " coefficients, model has " +
                              std::to_string(model.coefficient_count()));
    fs::create_directories(out_dir);
    for (int t = 0; t < curves.frames(); ++t) {
        Coefficients x(curves.coeffs.row(t).transpose().cwiseMax(0.0).cwiseMin(1.0));
        HeadPose pose;
        pose.rotation = curves.pose.row(t).head<3>();
        pose.translation = curves.pose.row(t).tail<3>();
        const Eigen::MatrixX3d mesh = apply_pose(evaluate_mesh(model, x), pose);
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.obj", t);
        save_obj(mesh, model.faces, (fs::path(out_dir) / name).string());
    }
}

}  // namespace avbf
