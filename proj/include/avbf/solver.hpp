#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

#include "avbf/geometry.hpp"

namespace avbf {

/// Depth observation as a point cloud with per-point unit normals.
struct DepthObservation {
    Eigen::MatrixX3d points;   // N x 3
    Eigen::MatrixX3d normals;  // N x 3, unit length
    std::vector<int> correspondence_hint;  // optional: vertex index per point

    int size() const { return static_cast<int>(points.rows()); }
    void validate() const;
};

struct LandmarkObservation {
    Eigen::MatrixX2d uv;          // J x 2 detected pixel positions
    std::vector<bool> visibility; // J flags

    int size() const { return static_cast<int>(uv.rows()); }
    void validate(const Camera& camera) const;
};

struct FitWeights {
    double depth = 1.0;
    double landmark = 0.001;
    double l1 = 0.01;

    void validate() const;
};

struct FitResult {
    Coefficients x;
    HeadPose pose;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string error;  // non-empty when the frame failed; fit_sequence keeps going
};

struct FitSchedule {
    int max_sweeps = 200;
    double tol = 1e-6;
    int icp_max_iters = 30;
    double icp_tol = 1e-9;
    // ICP <-> coefficient-solve rounds per frame. One round leaves the pose
    // fitted against the previous frame's expression; iterating to a small
    // pose update removes that staleness.
    int max_alternations = 8;
    double alternation_tol = 1e-7;
};

/// Nearest posed-model vertex for every observed point (hint wins when present).
std::vector<int> match_correspondences(const Eigen::MatrixX3d& posed_vertices,
                                       const DepthObservation& obs);

/// Rigid alignment by iterated point-plane minimization: nearest-neighbor
/// matching, then a linearized small-angle 6-DoF solve per iteration.
/// Throws SingularConfigurationError when the 6x6 system is rank deficient
/// (e.g. all normals parallel); InvalidArgument for fewer than 6 points.
HeadPose rigid_align_icp(const BlendshapeModel& model, const Coefficients& x_init,
                         const DepthObservation& obs, const HeadPose& pose_init,
                         int max_iters = 30, double tol = 1e-9);

/// Point-to-plane data term: sum over matched points of (n^T (v(x) - p))^2.
double depth_loss(const BlendshapeModel& model, const Coefficients& x, const HeadPose& pose,
                  const DepthObservation& obs);

/// Reprojection data term over visible landmarks; throws BehindCameraError
/// when a model landmark projects from non-positive depth.
double landmark_loss(const BlendshapeModel& model, const Coefficients& x, const HeadPose& pose,
                     const Camera& camera, const LandmarkObservation& lm);

/// Full objective: depth + landmark terms plus the L1 penalty.
double fit_objective(const BlendshapeModel& model, const Coefficients& x, const HeadPose& pose,
                     const DepthObservation& obs, const LandmarkObservation* lm,
                     const Camera* camera, const FitWeights& w);

/// Box-constrained L1 least squares via cyclic exact coordinate descent.
///
/// Each coordinate minimizes its 1-D quadratic + L1 restriction in closed
/// form (soft threshold) and clamps to [0,1]. The landmark term is
/// relinearized at the start of every sweep; a sweep that fails to reduce
/// the true objective is rolled back and stops the solve. Sweeps stop when
/// the max coordinate change drops below `tol`.
FitResult solve_coefficients(const BlendshapeModel& model, const HeadPose& pose,
                             const DepthObservation& obs, const LandmarkObservation* lm,
                             const Camera* camera, const FitWeights& w,
                             const Coefficients& x_init, int max_sweeps = 200, double tol = 1e-6);

/// Per-frame ICP + coefficient solve, warm-started from the previous frame.
/// Frame errors are recorded in the result; processing continues.
std::vector<FitResult> fit_sequence(
    const BlendshapeModel& model,
    const std::vector<std::pair<DepthObservation, LandmarkObservation>>& frames,
    const Camera& camera, const FitWeights& w, const FitSchedule& schedule = FitSchedule{});

/// Animation curve table shared by the fit and infer commands.
/// CSV columns: frame, converged, objective, rx, ry, rz, tx, ty, tz, x_0..x_{K-1}.
struct CurveTable {
    std::vector<int> frame;
    std::vector<int> converged;
    std::vector<double> objective;
    Eigen::MatrixXd pose;    // T x 6 (rotation xyz, translation xyz)
    Eigen::MatrixXd coeffs;  // T x K

    int frames() const { return static_cast<int>(frame.size()); }
    int coefficient_count() const { return static_cast<int>(coeffs.cols()); }
};

CurveTable curves_from_results(const std::vector<FitResult>& results);
void write_curves_csv(const CurveTable& curves, const std::string& path);
CurveTable read_curves_csv(const std::string& path);

/// Small-case observation file: JSON with a camera plus per-frame points,
/// normals, landmarks and visibility.
struct ObservationSet {
    Camera camera;
    std::vector<std::pair<DepthObservation, LandmarkObservation>> frames;
};

ObservationSet load_observations_json(const std::string& path);

}  // namespace avbf
