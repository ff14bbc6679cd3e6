#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <string>
#include <vector>

#include "avbf/error.hpp"

namespace avbf {

enum class CoefficientRole { Speech, NonSpeech };

/// Linear blendshape model: a neutral mesh plus K additive displacement
/// fields. Column k of `deltas` stores the per-vertex xyz displacement of
/// blendshape k, vertex-major (row 3*i + c is component c of vertex i).
///
/// Immutable after construction; all operations on it are pure.
struct BlendshapeModel {
    std::string name;
    Eigen::MatrixX3d neutral;                  // V x 3
    Eigen::MatrixXd deltas;                    // 3V x K
    std::vector<CoefficientRole> roles;        // K entries
    std::vector<std::string> shape_names;      // K entries
    std::vector<int> landmark_indices;         // J vertex indices
    std::vector<std::array<int, 3>> faces;     // optional topology for OBJ export

    int vertex_count() const { return static_cast<int>(neutral.rows()); }
    int coefficient_count() const { return static_cast<int>(deltas.cols()); }
    int landmark_count() const { return static_cast<int>(landmark_indices.size()); }

    std::vector<int> speech_indices() const;
    std::vector<int> nonspeech_indices() const;

    /// Throws InvalidArgument on any violated structural invariant
    /// (dimension mismatch, partition not covering all indices, duplicate
    /// or out-of-range landmarks).
    void validate() const;
};

/// Per-frame activation weights, each in [0,1].
struct Coefficients {
    Eigen::VectorXd x;

    Coefficients() = default;
    explicit Coefficients(Eigen::VectorXd values) : x(std::move(values)) {}
    static Coefficients zeros(int k) { return Coefficients(Eigen::VectorXd::Zero(k)); }

    int size() const { return static_cast<int>(x.size()); }
    void validate() const;  // throws if any component outside [0,1] or non-finite
};

/// Rigid head pose: axis-angle rotation (|r| < pi) plus translation.
struct HeadPose {
    Eigen::Vector3d rotation = Eigen::Vector3d::Zero();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Matrix3d rotation_matrix() const;
    static HeadPose from_matrix(const Eigen::Matrix3d& rot, const Eigen::Vector3d& trans);
    void validate() const;
};

/// Pinhole camera. Focal and principal point in pixels.
struct Camera {
    Eigen::Vector2d focal;
    Eigen::Vector2d principal_point;
    Eigen::Vector2d image_size;

    void validate() const;
};

/// v(x) = b0 + reshape(B x). Throws InvalidArgument on length mismatch.
Eigen::MatrixX3d evaluate_mesh(const BlendshapeModel& model, const Coefficients& x);

/// Applies v' = R v + t per vertex. Throws InvalidArgument on non-finite input.
Eigen::MatrixX3d apply_pose(const Eigen::MatrixX3d& vertices, const HeadPose& pose);

/// Pinhole projection u = focal .* (xy / z) + principal_point.
/// Throws BehindCameraError when z <= 0.
Eigen::Vector2d project(const Eigen::Vector3d& point, const Camera& camera);

/// 2x3 Jacobian of `project` at `point`. Same precondition.
Eigen::Matrix<double, 2, 3> project_jacobian(const Eigen::Vector3d& point, const Camera& camera);

/// Splits x into (x_av, x_v) by partition role, each in ascending index order.
std::pair<Eigen::VectorXd, Eigen::VectorXd> partition_coefficients(const BlendshapeModel& model,
                                                                   const Coefficients& x);

/// Inverse of partition_coefficients.
Coefficients merge_coefficients(const BlendshapeModel& model, const Eigen::VectorXd& x_av,
                                const Eigen::VectorXd& x_v);

/// Model file I/O (JSON schema: name, vertices, blendshapes[{name, role,
/// delta}], landmark_indices, optional faces).
BlendshapeModel load_model_json(const std::string& path);
void save_model_json(const BlendshapeModel& model, const std::string& path);

/// Wavefront OBJ export of one posed mesh. Faces written only if the model
/// carries topology.
void save_obj(const Eigen::MatrixX3d& vertices, const std::vector<std::array<int, 3>>& faces,
              const std::string& path);

}  // namespace avbf
