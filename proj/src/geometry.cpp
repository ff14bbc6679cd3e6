#include "avbf/geometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace avbf {

using nlohmann::json;

std::vector<int> BlendshapeModel::speech_indices() const {
    std::vector<int> out;
    for (int k = 0; k < coefficient_count(); ++k)
        if (roles[k] == CoefficientRole::Speech) out.push_back(k);
    return out;
}

std::vector<int> BlendshapeModel::nonspeech_indices() const {
    std::vector<int> out;
    for (int k = 0; k < coefficient_count(); ++k)
        if (roles[k] == CoefficientRole::NonSpeech) out.push_back(k);
    return out;
}

void BlendshapeModel::validate() const {
    const int v = vertex_count();
    const int k = coefficient_count();
    if (v < 4) throw InvalidArgument("model needs at least 4 vertices, got " + std::to_string(v));
    if (k < 1) throw InvalidArgument("model needs at least 1 blendshape");
    if (deltas.rows() != 3 * static_cast<Eigen::Index>(v))
        throw InvalidArgument("blendshape matrix must have 3V rows");
    if (static_cast<int>(roles.size()) != k)
        throw InvalidArgument("partition must assign a role to every coefficient");
    if (static_cast<int>(shape_names.size()) != k)
        throw InvalidArgument("every blendshape needs a name");
    if (k >= 2) {
        const bool has_speech = std::any_of(roles.begin(), roles.end(),
                                            [](CoefficientRole r) { return r == CoefficientRole::Speech; });
        const bool has_nonspeech = std::any_of(roles.begin(), roles.end(),
                                               [](CoefficientRole r) { return r == CoefficientRole::NonSpeech; });
        if (!has_speech || !has_nonspeech)
            throw InvalidArgument("partition needs at least one speech and one non-speech index");
    }
    if (landmark_indices.empty()) throw InvalidArgument("model needs at least 1 landmark index");
    std::set<int> seen;
    for (int idx : landmark_indices) {
        if (idx < 0 || idx >= v)
            throw InvalidArgument("landmark index " + std::to_string(idx) + " out of range");
        if (!seen.insert(idx).second)
            throw InvalidArgument("duplicate landmark index " + std::to_string(idx));
    }
    for (const auto& f : faces)
        for (int idx : f)
            if (idx < 0 || idx >= v) throw InvalidArgument("face vertex index out of range");
    if (!neutral.allFinite() || !deltas.allFinite())
        throw InvalidArgument("model contains non-finite values");
}

void Coefficients::validate() const {
    for (int i = 0; i < size(); ++i) {
        const double v = x[i];
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            throw InvalidArgument("coefficient " + std::to_string(i) + " outside [0,1]: " +
                                  std::to_string(v));
    }
}

Eigen::Matrix3d HeadPose::rotation_matrix() const {
    const double angle = rotation.norm();
    if (angle < 1e-300) return Eigen::Matrix3d::Identity();
    return Eigen::AngleAxisd(angle, rotation / angle).toRotationMatrix();
}

HeadPose HeadPose::from_matrix(const Eigen::Matrix3d& rot, const Eigen::Vector3d& trans) {
    Eigen::AngleAxisd aa(rot);
    HeadPose pose;
    pose.rotation = aa.angle() * aa.axis();
    pose.translation = trans;
    return pose;
}

void HeadPose::validate() const {
    if (!rotation.allFinite() || !translation.allFinite())
        throw InvalidArgument("pose contains non-finite values");
    if (rotation.norm() >= M_PI) throw InvalidArgument("axis-angle rotation magnitude must be < pi");
}

void Camera::validate() const {
    if (!(focal[0] > 0.0) || !(focal[1] > 0.0)) throw InvalidArgument("focal lengths must be positive");
    if (principal_point[0] < 0.0 || principal_point[0] > image_size[0] ||
        principal_point[1] < 0.0 || principal_point[1] > image_size[1])
        throw InvalidArgument("principal point outside image bounds");
}

Eigen::MatrixX3d evaluate_mesh(const BlendshapeModel& model, const Coefficients& x) {
    if (x.size() != model.coefficient_count())
        throw InvalidArgument("coefficient vector length " + std::to_string(x.size()) +
                              " does not match model K=" + std::to_string(model.coefficient_count()));
    Eigen::VectorXd flat = model.deltas * x.x;
    Eigen::MatrixX3d out = model.neutral;
    const int v = model.vertex_count();
    for (int i = 0; i < v; ++i)
        out.row(i) += Eigen::RowVector3d(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
    return out;
}

Eigen::MatrixX3d apply_pose(const Eigen::MatrixX3d& vertices, const HeadPose& pose) {
    if (!vertices.allFinite()) throw InvalidArgument("apply_pose: non-finite vertices");
    if (!pose.rotation.allFinite() || !pose.translation.allFinite())
        throw InvalidArgument("apply_pose: non-finite pose");
    const Eigen::Matrix3d r = pose.rotation_matrix();
    Eigen::MatrixX3d out = vertices * r.transpose();
    out.rowwise() += pose.translation.transpose();
    return out;
}

Eigen::Vector2d project(const Eigen::Vector3d& point, const Camera& camera) {
    if (!(point.z() > 0.0))
        throw BehindCameraError("cannot project point with depth " + std::to_string(point.z()));
    return camera.focal.cwiseProduct(point.head<2>() / point.z()) + camera.principal_point;
}

Eigen::Matrix<double, 2, 3> project_jacobian(const Eigen::Vector3d& point, const Camera& camera) {
    if (!(point.z() > 0.0))
        throw BehindCameraError("cannot project point with depth " + std::to_string(point.z()));
    const double z = point.z();
    Eigen::Matrix<double, 2, 3> j;
    j << camera.focal[0] / z, 0.0, -camera.focal[0] * point.x() / (z * z),
         0.0, camera.focal[1] / z, -camera.focal[1] * point.y() / (z * z);
    return j;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> partition_coefficients(const BlendshapeModel& model,
                                                                   const Coefficients& x) {
    if (x.size() != model.coefficient_count())
        throw InvalidArgument("partition_coefficients: length mismatch");
    const auto sp = model.speech_indices();
    const auto ns = model.nonspeech_indices();
    Eigen::VectorXd x_av(sp.size()), x_v(ns.size());
    for (size_t i = 0; i < sp.size(); ++i) x_av[static_cast<Eigen::Index>(i)] = x.x[sp[i]];
    for (size_t i = 0; i < ns.size(); ++i) x_v[static_cast<Eigen::Index>(i)] = x.x[ns[i]];
    return {x_av, x_v};
}

Coefficients merge_coefficients(const BlendshapeModel& model, const Eigen::VectorXd& x_av,
                                const Eigen::VectorXd& x_v) {
    const auto sp = model.speech_indices();
    const auto ns = model.nonspeech_indices();
    if (x_av.size() != static_cast<Eigen::Index>(sp.size()) ||
        x_v.size() != static_cast<Eigen::Index>(ns.size()))
        throw InvalidArgument("merge_coefficients: split sizes do not match partition");
    Eigen::VectorXd full(model.coefficient_count());
    for (size_t i = 0; i < sp.size(); ++i) full[sp[i]] = x_av[static_cast<Eigen::Index>(i)];
    for (size_t i = 0; i < ns.size(); ++i) full[ns[i]] = x_v[static_cast<Eigen::Index>(i)];
    return Coefficients(full);
}

namespace {

json matrix_to_json(const Eigen::MatrixX3d& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        rows.push_back({m(i, 0), m(i, 1), m(i, 2)});
    return rows;
}

Eigen::MatrixX3d matrix_from_json(const json& rows, const char* what) {
    if (!rows.is_array() || rows.empty()) throw BadFormatError(std::string(what) + ": expected non-empty array");
    Eigen::MatrixX3d m(rows.size(), 3);
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (!r.is_array() || r.size() != 3)
            throw BadFormatError(std::string(what) + ": row " + std::to_string(i) + " is not a 3-vector");
        for (int c = 0; c < 3; ++c) m(static_cast<Eigen::Index>(i), c) = r[c].get<double>();
    }
    return m;
}

}  // namespace

BlendshapeModel load_model_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model file " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw BadFormatError("model file " + path + ": " + e.what());
    }
    BlendshapeModel model;
    try {
        model.name = doc.at("name").get<std::string>();
        model.neutral = matrix_from_json(doc.at("vertices"), "vertices");
        const auto& shapes = doc.at("blendshapes");
        const int v = model.vertex_count();
        const int k = static_cast<int>(shapes.size());
        model.deltas.resize(3 * v, k);
        for (int j = 0; j < k; ++j) {
            const auto& s = shapes[static_cast<size_t>(j)];
            model.shape_names.push_back(s.at("name").get<std::string>());
            const std::string role = s.at("role").get<std::string>();
            if (role == "speech")
                model.roles.push_back(CoefficientRole::Speech);
            else if (role == "nonspeech")
                model.roles.push_back(CoefficientRole::NonSpeech);
            else
                throw BadFormatError("unknown blendshape role '" + role + "'");
            Eigen::MatrixX3d delta = matrix_from_json(s.at("delta"), "delta");
            if (delta.rows() != v) throw BadFormatError("blendshape delta has wrong vertex count");
            for (int i = 0; i < v; ++i)
                for (int c = 0; c < 3; ++c) model.deltas(3 * i + c, j) = delta(i, c);
        }
        model.landmark_indices = doc.at("landmark_indices").get<std::vector<int>>();
        if (doc.contains("faces"))
            for (const auto& f : doc["faces"])
                model.faces.push_back({f[0].get<int>(), f[1].get<int>(), f[2].get<int>()});
    } catch (const json::exception& e) {
        throw BadFormatError("model file " + path + ": " + e.what());
    }
    model.validate();
    return model;
}

void save_model_json(const BlendshapeModel& model, const std::string& path) {
    model.validate();
    json doc;
    doc["name"] = model.name;
    doc["vertices"] = matrix_to_json(model.neutral);
    json shapes = json::array();
    const int v = model.vertex_count();
    for (int j = 0; j < model.coefficient_count(); ++j) {
        Eigen::MatrixX3d delta(v, 3);
        for (int i = 0; i < v; ++i)
            for (int c = 0; c < 3; ++c) delta(i, c) = model.deltas(3 * i + c, j);
        shapes.push_back({{"name", model.shape_names[j]},
                          {"role", model.roles[j] == CoefficientRole::Speech ? "speech" : "nonspeech"},
                          {"delta", matrix_to_json(delta)}});
    }
    doc["blendshapes"] = shapes;
    doc["landmark_indices"] = model.landmark_indices;
    if (!model.faces.empty()) {
        json faces = json::array();
        for (const auto& f : model.faces) faces.push_back({f[0], f[1], f[2]});
        doc["faces"] = faces;
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write model file " + path);
    out << doc.dump(1) << "\n";
}

void save_obj(const Eigen::MatrixX3d& vertices, const std::vector<std::array<int, 3>>& faces,
              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write OBJ file " + path);
    out.precision(9);
    for (Eigen::Index i = 0; i < vertices.rows(); ++i)
        out << "v " << vertices(i, 0) << " " << vertices(i, 1) << " " << vertices(i, 2) << "\n";
    for (const auto& f : faces)
        out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
}

}  // namespace avbf
