#include "avbf/solver.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace avbf {

void DepthObservation::validate() const {
    if (points.rows() < 1) throw InvalidArgument("depth observation needs at least one point");
    if (normals.rows() != points.rows()) throw InvalidArgument("normals/points count mismatch");
    for (Eigen::Index i = 0; i < normals.rows(); ++i) {
        const double len = normals.row(i).norm();
        if (std::abs(len - 1.0) > 1e-6)
            throw InvalidArgument("normal " + std::to_string(i) + " not unit length");
    }
    if (!correspondence_hint.empty() &&
        correspondence_hint.size() != static_cast<size_t>(points.rows()))
        throw InvalidArgument("correspondence hint count mismatch");
}

void LandmarkObservation::validate(const Camera& camera) const {
    if (visibility.size() != static_cast<size_t>(uv.rows()))
        throw InvalidArgument("landmark visibility count mismatch");
    for (Eigen::Index j = 0; j < uv.rows(); ++j) {
        if (!visibility[static_cast<size_t>(j)]) continue;
        if (uv(j, 0) < 0.0 || uv(j, 0) > camera.image_size[0] || uv(j, 1) < 0.0 ||
            uv(j, 1) > camera.image_size[1])
            throw InvalidArgument("visible landmark " + std::to_string(j) + " outside image bounds");
    }
}

void FitWeights::validate() const {
    if (depth < 0.0 || landmark < 0.0 || l1 < 0.0)
        throw InvalidArgument("fit weights must be nonnegative");
    if (!(depth > 0.0) && !(landmark > 0.0))
        throw InvalidArgument("at least one of the depth and landmark weights must be positive");
}

std::vector<int> match_correspondences(const Eigen::MatrixX3d& posed_vertices,
                                       const DepthObservation& obs) {
    const int n = obs.size();
    std::vector<int> match(static_cast<size_t>(n));
    if (!obs.correspondence_hint.empty()) {
        for (int i = 0; i < n; ++i) {
            const int hint = obs.correspondence_hint[static_cast<size_t>(i)];
            if (hint < 0 || hint >= posed_vertices.rows())
                throw InvalidArgument("correspondence hint out of range");
            match[static_cast<size_t>(i)] = hint;
        }
        return match;
    }
    for (int i = 0; i < n; ++i) {
        const Eigen::RowVector3d p = obs.points.row(i);
        Eigen::Index best = 0;
        (posed_vertices.rowwise() - p).rowwise().squaredNorm().minCoeff(&best);
        match[static_cast<size_t>(i)] = static_cast<int>(best);
    }
    return match;
}

HeadPose rigid_align_icp(const BlendshapeModel& model, const Coefficients& x_init,
                         const DepthObservation& obs, const HeadPose& pose_init, int max_iters,
                         double tol) {
    obs.validate();
    if (obs.size() < 6) throw InvalidArgument("ICP needs at least 6 points for a 6-DoF pose");

    const Eigen::MatrixX3d mesh = evaluate_mesh(model, x_init);
    HeadPose pose = pose_init;

    for (int iter = 0; iter < max_iters; ++iter) {
        const Eigen::MatrixX3d posed = apply_pose(mesh, pose);
        const std::vector<int> match = match_correspondences(posed, obs);

        Eigen::Matrix<double, 6, 6> ata = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> atb = Eigen::Matrix<double, 6, 1>::Zero();
        for (int i = 0; i < obs.size(); ++i) {
            const Eigen::Vector3d v = posed.row(match[static_cast<size_t>(i)]);
            const Eigen::Vector3d n = obs.normals.row(i);
            const Eigen::Vector3d p = obs.points.row(i);
            Eigen::Matrix<double, 6, 1> jac;
            jac.head<3>() = v.cross(n);
            jac.tail<3>() = n;
            const double err = n.dot(v - p);
            ata += jac * jac.transpose();
            atb -= err * jac;
        }

        Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(ata);
        const double max_ev = eig.eigenvalues().cwiseAbs().maxCoeff();
        int rank = 0;
        for (int k = 0; k < 6; ++k)
            if (std::abs(eig.eigenvalues()[k]) > std::max(max_ev, 1e-300) * 1e-10) ++rank;
        if (rank < 6)
            throw SingularConfigurationError(
                rank, "ICP normal equations are rank deficient (rank " + std::to_string(rank) +
                          " of 6); the observation geometry does not constrain the pose");

        const Eigen::Matrix<double, 6, 1> delta = eig.eigenvectors() *
            (eig.eigenvalues().cwiseInverse().asDiagonal() * (eig.eigenvectors().transpose() * atb));

        const Eigen::Vector3d omega = delta.head<3>();
        const Eigen::Vector3d trans = delta.tail<3>();
        Eigen::Matrix3d r_inc = Eigen::Matrix3d::Identity();
        if (omega.norm() > 0.0)
            r_inc = Eigen::AngleAxisd(omega.norm(), omega.normalized()).toRotationMatrix();
        const Eigen::Matrix3d r_new = r_inc * pose.rotation_matrix();
        const Eigen::Vector3d t_new = r_inc * pose.translation + trans;
        pose = HeadPose::from_matrix(r_new, t_new);

        if (delta.norm() < tol) break;
    }
    return pose;
}

double depth_loss(const BlendshapeModel& model, const Coefficients& x, const HeadPose& pose,
                  const DepthObservation& obs) {
    const Eigen::MatrixX3d posed = apply_pose(evaluate_mesh(model, x), pose);
    const std::vector<int> match = match_correspondences(posed, obs);
    double loss = 0.0;
    for (int i = 0; i < obs.size(); ++i) {
        const Eigen::Vector3d v = posed.row(match[static_cast<size_t>(i)]);
        const Eigen::Vector3d n = obs.normals.row(i);
        const Eigen::Vector3d p = obs.points.row(i);
        const double r = n.dot(v - p);
        loss += r * r;
    }
    return loss;
}

double landmark_loss(const BlendshapeModel& model, const Coefficients& x, const HeadPose& pose,
                     const Camera& camera, const LandmarkObservation& lm) {
    if (lm.size() != model.landmark_count())
        throw InvalidArgument("landmark observation count does not match model");
    const Eigen::MatrixX3d posed = apply_pose(evaluate_mesh(model, x), pose);
    double loss = 0.0;
    for (int j = 0; j < lm.size(); ++j) {
        if (!lm.visibility[static_cast<size_t>(j)]) continue;
        const Eigen::Vector3d v = posed.row(model.landmark_indices[static_cast<size_t>(j)]);
        const Eigen::Vector2d proj = project(v, camera);
        loss += (proj - lm.uv.row(j).transpose()).squaredNorm();
    }
    return loss;
}

double fit_objective(const BlendshapeModel& model, const Coefficients& x, const HeadPose& pose,
                     const DepthObservation& obs, const LandmarkObservation* lm,
                     const Camera* camera, const FitWeights& w) {
    double obj = w.depth * depth_loss(model, x, pose, obs);
    if (lm != nullptr && camera != nullptr && w.landmark > 0.0)
        obj += w.landmark * landmark_loss(model, x, pose, *camera, *lm);
    obj += w.l1 * x.x.cwiseAbs().sum();
    return obj;
}

namespace {

/// Weighted linear residual system r(x) = c + D x; rows carry weights.
struct ResidualSystem {
    Eigen::MatrixXd d;        // rows x K
    Eigen::VectorXd constant; // rows
    Eigen::VectorXd weight;   // rows
};

/// Depth rows are exact (the model is linear in x); landmark rows come from
/// a first-order expansion of the projection around x_ref.
ResidualSystem build_residual_system(const BlendshapeModel& model, const HeadPose& pose,
                                     const DepthObservation& obs, const std::vector<int>& match,
                                     const LandmarkObservation* lm, const Camera* camera,
                                     const FitWeights& w, const Coefficients& x_ref) {
    const int k = model.coefficient_count();
    const Eigen::Matrix3d rot = pose.rotation_matrix();

    int rows = obs.size();
    const bool use_lm = lm != nullptr && camera != nullptr && w.landmark > 0.0;
    if (use_lm)
        for (int j = 0; j < lm->size(); ++j)
            if (lm->visibility[static_cast<size_t>(j)]) rows += 2;

    ResidualSystem sys;
    sys.d.setZero(rows, k);
    sys.constant.resize(rows);
    sys.weight.resize(rows);

    const Eigen::MatrixX3d neutral_posed = apply_pose(model.neutral, pose);
    int row = 0;
    for (int i = 0; i < obs.size(); ++i, ++row) {
        const int c = match[static_cast<size_t>(i)];
        const Eigen::Vector3d n = obs.normals.row(i);
        const Eigen::Vector3d p = obs.points.row(i);
        for (int j = 0; j < k; ++j) {
            const Eigen::Vector3d delta = model.deltas.block<3, 1>(3 * c, j);
            sys.d(row, j) = n.dot(rot * delta);
        }
        sys.constant[row] = n.dot(neutral_posed.row(c).transpose() - p);
        sys.weight[row] = w.depth;
    }

    if (use_lm) {
        const Eigen::MatrixX3d posed_ref = apply_pose(evaluate_mesh(model, x_ref), pose);
        for (int j = 0; j < lm->size(); ++j) {
            if (!lm->visibility[static_cast<size_t>(j)]) continue;
            const int vi = model.landmark_indices[static_cast<size_t>(j)];
            const Eigen::Vector3d v = posed_ref.row(vi);
            const Eigen::Vector2d proj = project(v, *camera);
            const Eigen::Matrix<double, 2, 3> jproj = project_jacobian(v, *camera);
            Eigen::Matrix<double, 2, Eigen::Dynamic> g(2, k);
            for (int s = 0; s < k; ++s)
                g.col(s) = jproj * (rot * model.deltas.block<3, 1>(3 * vi, s));
            const Eigen::Vector2d res = proj - lm->uv.row(j).transpose();
            const Eigen::Vector2d c0 = res - g * x_ref.x;
            for (int axis = 0; axis < 2; ++axis, ++row) {
                sys.d.row(row) = g.row(axis);
                sys.constant[row] = c0[axis];
                sys.weight[row] = w.landmark;
            }
        }
    }
    return sys;
}

}  // namespace

FitResult solve_coefficients(const BlendshapeModel& model, const HeadPose& pose,
                             const DepthObservation& obs, const LandmarkObservation* lm,
                             const Camera* camera, const FitWeights& w,
                             const Coefficients& x_init, int max_sweeps, double tol) {
    obs.validate();
    w.validate();
    const int k = model.coefficient_count();
    if (x_init.size() != k) throw InvalidArgument("solve_coefficients: x_init length mismatch");

    FitResult result;
    result.pose = pose;
    Eigen::VectorXd x = x_init.x.cwiseMax(0.0).cwiseMin(1.0);

    // Correspondences fixed once per solve; the pose does not change here.
    const Eigen::MatrixX3d posed_init = apply_pose(evaluate_mesh(model, Coefficients(x)), pose);
    const std::vector<int> match = match_correspondences(posed_init, obs);

    const bool use_lm = lm != nullptr && camera != nullptr && w.landmark > 0.0;
    double objective = fit_objective(model, Coefficients(x), pose, obs, lm, camera, w);

    bool unconstrained_direction = false;
    bool inner_converged = false;
    bool outer_converged = !use_lm;
    int sweeps = 0;

    // Outer rounds relinearize the landmark residuals (Gauss-Newton); each
    // inner pass is exact cyclic coordinate descent on the fixed quadratic
    // + L1 surrogate. Depth-only problems finish in a single round where
    // the surrogate is the objective itself.
    while (sweeps < max_sweeps) {
        const ResidualSystem sys =
            build_residual_system(model, pose, obs, match, lm, camera, w, Coefficients(x));
        Eigen::VectorXd residual = sys.constant + sys.d * x;
        const Eigen::VectorXd x_round_start = x;
        const double objective_round_start = objective;

        inner_converged = false;
        for (; sweeps < max_sweeps && !inner_converged; ) {
            ++sweeps;
            double max_change = 0.0;
            for (int j = 0; j < k; ++j) {
                const Eigen::VectorXd col = sys.d.col(j);
                const double curvature = 2.0 * (sys.weight.array() * col.array().square()).sum();
                if (curvature <= 0.0) {
                    // Flat coordinate: the only slope left is the L1 penalty,
                    // which we cannot descend exactly; leave it and report
                    // non-convergence.
                    if (w.l1 > 0.0 && x[j] > 0.0) unconstrained_direction = true;
                    continue;
                }
                const double grad =
                    2.0 * (sys.weight.array() * col.array() * residual.array()).sum();
                const double unconstrained = x[j] - grad / curvature;
                const double thresholded = unconstrained - w.l1 / curvature;
                const double x_new = std::clamp(thresholded, 0.0, 1.0);
                const double change = x_new - x[j];
                if (change != 0.0) {
                    residual += col * change;
                    x[j] = x_new;
                    max_change = std::max(max_change, std::abs(change));
                }
            }
            if (max_change < tol) inner_converged = true;
        }

        objective = fit_objective(model, Coefficients(x), pose, obs, lm, camera, w);
        if (objective > objective_round_start + 1e-12 * (1.0 + objective_round_start)) {
            // Landmark linearization error made the round ascend; keep the
            // previous iterate.
            x = x_round_start;
            objective = objective_round_start;
            outer_converged = true;
            break;
        }
        if (!use_lm) break;
        if ((x - x_round_start).lpNorm<Eigen::Infinity>() < tol) {
            outer_converged = true;
            break;
        }
    }

    result.x = Coefficients(x);
    result.objective = objective;
    result.iterations = sweeps;
    result.converged = inner_converged && outer_converged && !unconstrained_direction;
    return result;
}

std::vector<FitResult> fit_sequence(
    const BlendshapeModel& model,
    const std::vector<std::pair<DepthObservation, LandmarkObservation>>& frames,
    const Camera& camera, const FitWeights& w, const FitSchedule& schedule) {
    if (frames.empty()) throw InvalidArgument("fit_sequence: need at least one frame");

    std::vector<FitResult> results;
    results.reserve(frames.size());
    HeadPose pose_prev;
    Coefficients x_prev = Coefficients::zeros(model.coefficient_count());

    for (const auto& [depth, landmarks] : frames) {
        FitResult result;
        try {
            HeadPose pose = pose_prev;
            Coefficients x = x_prev;
            for (int round = 0; round < std::max(1, schedule.max_alternations); ++round) {
                const HeadPose updated = rigid_align_icp(model, x, depth, pose,
                                                         schedule.icp_max_iters, schedule.icp_tol);
                const double pose_change = (updated.rotation - pose.rotation).norm() +
                                           (updated.translation - pose.translation).norm();
                pose = updated;
                result = solve_coefficients(model, pose, depth, &landmarks, &camera, w, x,
                                            schedule.max_sweeps, schedule.tol);
                x = result.x;
                if (round > 0 && pose_change < schedule.alternation_tol) break;
            }
            pose_prev = result.pose;
            x_prev = result.x;
        } catch (const Error& e) {
            result.x = x_prev;
            result.pose = pose_prev;
            result.error = e.what();
            result.converged = false;
        }
        results.push_back(std::move(result));
    }
    return results;
}

CurveTable curves_from_results(const std::vector<FitResult>& results) {
    CurveTable table;
    const int t = static_cast<int>(results.size());
    const int k = t > 0 ? results.front().x.size() : 0;
    table.pose.resize(t, 6);
    table.coeffs.resize(t, k);
    for (int i = 0; i < t; ++i) {
        const FitResult& r = results[static_cast<size_t>(i)];
        table.frame.push_back(i);
        table.converged.push_back(r.converged ? 1 : 0);
        table.objective.push_back(r.objective);
        table.pose.row(i) << r.pose.rotation.transpose(), r.pose.translation.transpose();
        table.coeffs.row(i) = r.x.x.transpose();
    }
    return table;
}

void write_curves_csv(const CurveTable& curves, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write curves CSV " + path);
    out << "frame,converged,objective,rx,ry,rz,tx,ty,tz";
    for (int j = 0; j < curves.coefficient_count(); ++j) out << ",x_" << j;
    out << "\n";
    out.precision(17);
    for (int i = 0; i < curves.frames(); ++i) {
        out << curves.frame[static_cast<size_t>(i)] << "," << curves.converged[static_cast<size_t>(i)]
            << "," << curves.objective[static_cast<size_t>(i)];
        for (int c = 0; c < 6; ++c) out << "," << curves.pose(i, c);
        for (int j = 0; j < curves.coefficient_count(); ++j) out << "," << curves.coeffs(i, j);
        out << "\n";
    }
}

CurveTable read_curves_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open curves CSV " + path);
    std::string line;
    if (!std::getline(in, line)) throw BadFormatError(path + ": empty CSV");
    int columns = 1;
    for (char ch : line) columns += ch == ',';
    const int k = columns - 9;
    if (k < 0) throw BadFormatError(path + ": curves CSV needs at least 9 columns");

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (static_cast<int>(row.size()) != columns)
            throw BadFormatError(path + ": inconsistent CSV row width");
        rows.push_back(std::move(row));
    }

    CurveTable table;
    const int t = static_cast<int>(rows.size());
    table.pose.resize(t, 6);
    table.coeffs.resize(t, k);
    for (int i = 0; i < t; ++i) {
        const auto& row = rows[static_cast<size_t>(i)];
        table.frame.push_back(static_cast<int>(row[0]));
        table.converged.push_back(static_cast<int>(row[1]));
        table.objective.push_back(row[2]);
        for (int c = 0; c < 6; ++c) table.pose(i, c) = row[static_cast<size_t>(3 + c)];
        for (int j = 0; j < k; ++j) table.coeffs(i, j) = row[static_cast<size_t>(9 + j)];
    }
    return table;
}

ObservationSet load_observations_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open observations file " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw BadFormatError(path + ": " + e.what());
    }
    ObservationSet set;
    try {
        const auto& cam = doc.at("camera");
        set.camera.focal = {cam.at("focal")[0].get<double>(), cam.at("focal")[1].get<double>()};
        set.camera.principal_point = {cam.at("principal_point")[0].get<double>(),
                                      cam.at("principal_point")[1].get<double>()};
        set.camera.image_size = {cam.at("image_size")[0].get<double>(),
                                 cam.at("image_size")[1].get<double>()};
        set.camera.validate();
        for (const auto& frame : doc.at("frames")) {
            DepthObservation depth;
            const auto& pts = frame.at("points");
            const auto& nrm = frame.at("normals");
            depth.points.resize(pts.size(), 3);
            depth.normals.resize(nrm.size(), 3);
            for (size_t i = 0; i < pts.size(); ++i)
                for (int c = 0; c < 3; ++c) {
                    depth.points(static_cast<Eigen::Index>(i), c) = pts[i][c].get<double>();
                    depth.normals(static_cast<Eigen::Index>(i), c) = nrm[i][c].get<double>();
                }
            LandmarkObservation lm;
            const auto& uv = frame.at("landmarks");
            lm.uv.resize(uv.size(), 2);
            for (size_t j = 0; j < uv.size(); ++j) {
                lm.uv(static_cast<Eigen::Index>(j), 0) = uv[j][0].get<double>();
                lm.uv(static_cast<Eigen::Index>(j), 1) = uv[j][1].get<double>();
            }
            if (frame.contains("visibility"))
                lm.visibility = frame["visibility"].get<std::vector<bool>>();
            else
                lm.visibility.assign(uv.size(), true);
            depth.validate();
            set.frames.emplace_back(std::move(depth), std::move(lm));
        }
    } catch (const nlohmann::json::exception& e) {
        throw BadFormatError(path + ": " + e.what());
    }
    return set;
}

}  // namespace avbf
