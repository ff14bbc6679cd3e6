#include "avbf/avbf.h"

#include <Eigen/Core>

#include <memory>
#include <string>
#include <vector>

#include "avbf/geometry.hpp"
#include "avbf/metrics.hpp"
#include "avbf/pipeline.hpp"

namespace {

thread_local std::string g_last_error;

avbf_status translate(const avbf::Error& e) {
    g_last_error = e.what();
    switch (e.code()) {
        case avbf::ErrorCode::InvalidArgument: return AVBF_INVALID_ARGUMENT;
        case avbf::ErrorCode::Io: return AVBF_IO_ERROR;
        case avbf::ErrorCode::BehindCamera: return AVBF_BEHIND_CAMERA;
        case avbf::ErrorCode::SingularConfiguration: return AVBF_SINGULAR;
        case avbf::ErrorCode::BadFormat: return AVBF_BAD_FORMAT;
        case avbf::ErrorCode::UndefinedRatio: return AVBF_UNDEFINED_RATIO;
        case avbf::ErrorCode::NonFinite: return AVBF_NON_FINITE;
        default: return AVBF_ERROR;
    }
}

template <typename Fn>
avbf_status guarded(Fn&& fn) {
    try {
        fn();
        return AVBF_OK;
    } catch (const avbf::Error& e) {
        return translate(e);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return AVBF_ERROR;
    } catch (...) {
        g_last_error = "unknown error";
        return AVBF_ERROR;
    }
}

std::string opt_string(const char* s) { return s == nullptr ? std::string() : std::string(s); }

}  // namespace

struct avbf_model {
    avbf::BlendshapeModel model;
};

extern "C" {

const char* avbf_version(void) { return "0.1.0"; }

const char* avbf_last_error(void) { return g_last_error.c_str(); }

avbf_status avbf_model_load(const char* path, avbf_model** out) {
    return guarded([&] {
        if (path == nullptr || out == nullptr) throw avbf::InvalidArgument("null argument");
        auto handle = std::make_unique<avbf_model>();
        handle->model = avbf::load_model_json(path);
        *out = handle.release();
    });
}

void avbf_model_free(avbf_model* model) { delete model; }

int32_t avbf_model_vertex_count(const avbf_model* model) {
    return model ? model->model.vertex_count() : -1;
}

int32_t avbf_model_coefficient_count(const avbf_model* model) {
    return model ? model->model.coefficient_count() : -1;
}

int32_t avbf_model_landmark_count(const avbf_model* model) {
    return model ? model->model.landmark_count() : -1;
}

avbf_status avbf_model_evaluate(const avbf_model* model, const double* coefficients,
                                int32_t coefficient_count, const double* pose6,
                                double* out_vertices) {
    return guarded([&] {
        if (model == nullptr || coefficients == nullptr || out_vertices == nullptr)
            throw avbf::InvalidArgument("null argument");
        avbf::Coefficients x(Eigen::Map<const Eigen::VectorXd>(coefficients, coefficient_count));
        Eigen::MatrixX3d mesh = avbf::evaluate_mesh(model->model, x);
        if (pose6 != nullptr) {
            avbf::HeadPose pose;
            pose.rotation = Eigen::Vector3d(pose6[0], pose6[1], pose6[2]);
            pose.translation = Eigen::Vector3d(pose6[3], pose6[4], pose6[5]);
            mesh = avbf::apply_pose(mesh, pose);
        }
        for (Eigen::Index i = 0; i < mesh.rows(); ++i)
            for (int c = 0; c < 3; ++c) out_vertices[3 * i + c] = mesh(i, c);
    });
}

avbf_status avbf_cmd_synth(const char* config_path, int has_seed, uint64_t seed,
                           const char* out_dir) {
    return guarded([&] {
        if (out_dir == nullptr) throw avbf::InvalidArgument("null output directory");
        avbf::cmd_synth(opt_string(config_path),
                        has_seed ? std::optional<std::uint64_t>(seed) : std::nullopt, out_dir);
    });
}

avbf_status avbf_cmd_fit(const char* data_path, int32_t sequence, const char* weights_path,
                         const char* model_path, const char* out_csv) {
    return guarded([&] {
        if (data_path == nullptr || out_csv == nullptr)
            throw avbf::InvalidArgument("null argument");
        avbf::cmd_fit(data_path, sequence, opt_string(weights_path), opt_string(model_path),
                      out_csv);
    });
}

avbf_status avbf_cmd_train(const char* config_path, const char* data_dir, int has_seed,
                           uint64_t seed, int causal_override, const char* out_dir) {
    return guarded([&] {
        if (data_dir == nullptr || out_dir == nullptr)
            throw avbf::InvalidArgument("null argument");
        std::optional<bool> causal;
        if (causal_override == 0) causal = false;
        if (causal_override == 1) causal = true;
        avbf::cmd_train(opt_string(config_path), data_dir,
                        has_seed ? std::optional<std::uint64_t>(seed) : std::nullopt, causal,
                        out_dir);
    });
}

avbf_status avbf_cmd_infer(const char* checkpoint_path, const char* data_dir, int32_t sequence,
                           const char* mode, const char* out_csv) {
    return guarded([&] {
        if (checkpoint_path == nullptr || data_dir == nullptr || mode == nullptr ||
            out_csv == nullptr)
            throw avbf::InvalidArgument("null argument");
        avbf::cmd_infer(checkpoint_path, data_dir, sequence, mode, out_csv);
    });
}

avbf_status avbf_cmd_eval(const char* const* checkpoint_paths, int32_t n_checkpoints,
                          const char* data_dir, const char* const* modes, int32_t n_modes,
                          int32_t holdout, const char* out_dir) {
    return guarded([&] {
        if (checkpoint_paths == nullptr || data_dir == nullptr || modes == nullptr ||
            out_dir == nullptr)
            throw avbf::InvalidArgument("null argument");
        std::vector<std::string> checkpoints(checkpoint_paths, checkpoint_paths + n_checkpoints);
        std::vector<std::string> mode_names(modes, modes + n_modes);
        avbf::cmd_eval(checkpoints, data_dir, mode_names, holdout, out_dir);
    });
}

avbf_status avbf_cmd_export(const char* model_path, const char* curves_csv, const char* out_dir) {
    return guarded([&] {
        if (model_path == nullptr || curves_csv == nullptr || out_dir == nullptr)
            throw avbf::InvalidArgument("null argument");
        avbf::cmd_export(model_path, curves_csv, out_dir);
    });
}

avbf_status avbf_energy_ratio(const double* prediction, const double* ground_truth, int32_t length,
                              double* out_ratio) {
    return guarded([&] {
        if (prediction == nullptr || ground_truth == nullptr || out_ratio == nullptr)
            throw avbf::InvalidArgument("null argument");
        *out_ratio = avbf::energy_ratio(Eigen::Map<const Eigen::VectorXd>(prediction, length),
                                        Eigen::Map<const Eigen::VectorXd>(ground_truth, length));
    });
}

avbf_status avbf_closure_metrics(const double* prediction, const double* ground_truth,
                                 int32_t length, double tau, int32_t min_run, double* out_recall,
                                 double* out_precision) {
    return guarded([&] {
        if (prediction == nullptr || ground_truth == nullptr || out_recall == nullptr ||
            out_precision == nullptr)
            throw avbf::InvalidArgument("null argument");
        const avbf::ClosureMetrics m = avbf::closure_metrics(
            Eigen::Map<const Eigen::VectorXd>(prediction, length),
            Eigen::Map<const Eigen::VectorXd>(ground_truth, length), tau, min_run);
        *out_recall = m.recall;
        *out_precision = m.precision;
    });
}

}  // extern "C"
