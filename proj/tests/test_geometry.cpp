#include <doctest.h>

#include <Eigen/Dense>

#include <cstdio>
#include <fstream>

#include "avbf/geometry.hpp"
#include "avbf/rng.hpp"

using namespace avbf;

namespace {

BlendshapeModel small_model(int v = 10, int k = 3, std::uint64_t seed = 7) {
    Rng rng(seed);
    BlendshapeModel m;
    m.name = "test";
    m.neutral.resize(v, 3);
    for (int i = 0; i < v; ++i)
        for (int c = 0; c < 3; ++c) m.neutral(i, c) = rng.normal();
    m.deltas.resize(3 * v, k);
    for (int i = 0; i < 3 * v; ++i)
        for (int j = 0; j < k; ++j) m.deltas(i, j) = rng.normal();
    for (int j = 0; j < k; ++j) {
        m.roles.push_back(j == 0 ? CoefficientRole::Speech : CoefficientRole::NonSpeech);
        m.shape_names.push_back("shape" + std::to_string(j));
    }
    m.landmark_indices = {0, 2, 4};
    m.validate();
    return m;
}

}  // namespace

TEST_CASE("evaluate_mesh: zero coefficients give the neutral exactly") {
    const BlendshapeModel m = small_model();
    const Eigen::MatrixX3d out = evaluate_mesh(m, Coefficients::zeros(3));
    CHECK(out == m.neutral);
}

TEST_CASE("evaluate_mesh: unit vector adds one blendshape column") {
    const BlendshapeModel m = small_model();
    for (int k = 0; k < 3; ++k) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(3);
        e[k] = 1.0;
        const Eigen::MatrixX3d out = evaluate_mesh(m, Coefficients(e));
        for (int i = 0; i < m.vertex_count(); ++i)
            for (int c = 0; c < 3; ++c)
                CHECK(out(i, c) ==
                      doctest::Approx(m.neutral(i, c) + m.deltas(3 * i + c, k)).epsilon(1e-14));
    }
}

TEST_CASE("evaluate_mesh: matches an element-wise matrix-vector oracle") {
    const BlendshapeModel m = small_model(10, 3, 11);
    Rng rng(3);
    Eigen::VectorXd x(3);
    for (int j = 0; j < 3; ++j) x[j] = rng.uniform();
    const Eigen::MatrixX3d out = evaluate_mesh(m, Coefficients(x));
    for (int i = 0; i < 10; ++i) {
        for (int c = 0; c < 3; ++c) {
            double expected = m.neutral(i, c);
            for (int j = 0; j < 3; ++j) expected += m.deltas(3 * i + c, j) * x[j];
            CHECK(out(i, c) == doctest::Approx(expected).epsilon(1e-13));
        }
    }
}

TEST_CASE("evaluate_mesh: displacement is linear in the coefficients") {
    const BlendshapeModel m = small_model(8, 3, 5);
    Rng rng(17);
    Eigen::VectorXd x(3), y(3);
    for (int j = 0; j < 3; ++j) {
        x[j] = 0.3 * rng.uniform();
        y[j] = 0.3 * rng.uniform();
    }
    const double a = 0.4, b = 0.5;
    const Eigen::MatrixX3d fx = evaluate_mesh(m, Coefficients(x)) - m.neutral;
    const Eigen::MatrixX3d fy = evaluate_mesh(m, Coefficients(y)) - m.neutral;
    const Eigen::MatrixX3d fc = evaluate_mesh(m, Coefficients(a * x + b * y)) - m.neutral;
    CHECK((fc - (a * fx + b * fy)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("evaluate_mesh: dimension mismatch is rejected") {
    const BlendshapeModel m = small_model();
    CHECK_THROWS_AS(evaluate_mesh(m, Coefficients::zeros(5)), InvalidArgument);
}

TEST_CASE("apply_pose: zero pose is the identity") {
    const BlendshapeModel m = small_model();
    CHECK(apply_pose(m.neutral, HeadPose{}) == m.neutral);
}

TEST_CASE("apply_pose: quarter turn about z maps x-axis to y-axis") {
    Eigen::MatrixX3d v(1, 3);
    v << 1.0, 0.0, 0.0;
    HeadPose pose;
    pose.rotation = Eigen::Vector3d(0.0, 0.0, M_PI / 2.0);
    const Eigen::MatrixX3d out = apply_pose(v, pose);
    CHECK(std::abs(out(0, 0)) < 1e-12);
    CHECK(std::abs(out(0, 1) - 1.0) < 1e-12);
    CHECK(std::abs(out(0, 2)) < 1e-12);
}

TEST_CASE("apply_pose: pairwise distances preserved within 1e-9") {
    Rng rng(23);
    Eigen::MatrixX3d cloud(12, 3);
    for (int i = 0; i < 12; ++i)
        for (int c = 0; c < 3; ++c) cloud(i, c) = 2.0 * rng.normal();
    HeadPose pose;
    pose.rotation = Eigen::Vector3d(0.4, -0.8, 1.1);
    pose.translation = Eigen::Vector3d(3.0, -1.0, 0.5);
    const Eigen::MatrixX3d out = apply_pose(cloud, pose);
    for (int i = 0; i < 12; ++i)
        for (int j = i + 1; j < 12; ++j) {
            const double before = (cloud.row(i) - cloud.row(j)).norm();
            const double after = (out.row(i) - out.row(j)).norm();
            CHECK(std::abs(after - before) <= 1e-9 * std::max(1.0, before));
        }
}

TEST_CASE("apply_pose: rejects non-finite input") {
    Eigen::MatrixX3d v(1, 3);
    v << 1.0, std::numeric_limits<double>::quiet_NaN(), 0.0;
    CHECK_THROWS_AS(apply_pose(v, HeadPose{}), InvalidArgument);
}

TEST_CASE("project: optical axis hits the principal point") {
    Camera cam;
    cam.focal = {120.0, 130.0};
    cam.principal_point = {30.0, 40.0};
    cam.image_size = {64.0, 80.0};
    for (double z : {0.5, 2.0, 9.0}) {
        const Eigen::Vector2d uv = project(Eigen::Vector3d(0, 0, z), cam);
        CHECK(uv[0] == doctest::Approx(30.0));
        CHECK(uv[1] == doctest::Approx(40.0));
    }
}

TEST_CASE("project: hand-evaluated pinhole example") {
    Camera cam;
    cam.focal = {100.0, 100.0};
    cam.principal_point = {64.0, 64.0};
    cam.image_size = {128.0, 128.0};
    const Eigen::Vector2d uv = project(Eigen::Vector3d(1.0, 0.0, 2.0), cam);
    CHECK(uv[0] == doctest::Approx(114.0));
    CHECK(uv[1] == doctest::Approx(64.0));
}

TEST_CASE("project: behind-camera error") {
    Camera cam;
    cam.focal = {100.0, 100.0};
    cam.principal_point = {64.0, 64.0};
    cam.image_size = {128.0, 128.0};
    CHECK_THROWS_AS(project(Eigen::Vector3d(0.0, 0.0, -1.0), cam), BehindCameraError);
    CHECK_THROWS_AS(project(Eigen::Vector3d(0.0, 0.0, 0.0), cam), BehindCameraError);
}

TEST_CASE("project_jacobian matches finite differences") {
    Camera cam;
    cam.focal = {90.0, 110.0};
    cam.principal_point = {32.0, 32.0};
    cam.image_size = {64.0, 64.0};
    const Eigen::Vector3d p(0.4, -0.7, 3.0);
    const auto jac = project_jacobian(p, cam);
    const double eps = 1e-6;
    for (int c = 0; c < 3; ++c) {
        Eigen::Vector3d up = p, down = p;
        up[c] += eps;
        down[c] -= eps;
        const Eigen::Vector2d fd = (project(up, cam) - project(down, cam)) / (2.0 * eps);
        CHECK(std::abs(jac(0, c) - fd[0]) < 1e-6);
        CHECK(std::abs(jac(1, c) - fd[1]) < 1e-6);
    }
}

TEST_CASE("partition: two-coefficient split") {
    BlendshapeModel m = small_model(10, 2, 9);
    m.roles = {CoefficientRole::Speech, CoefficientRole::NonSpeech};
    Eigen::VectorXd x(2);
    x << 0.3, 0.8;
    const auto [xav, xv] = partition_coefficients(m, Coefficients(x));
    REQUIRE(xav.size() == 1);
    REQUIRE(xv.size() == 1);
    CHECK(xav[0] == 0.3);
    CHECK(xv[0] == 0.8);
}

TEST_CASE("partition: all-speech model yields an empty non-speech split") {
    BlendshapeModel m = small_model(10, 1, 9);
    m.roles = {CoefficientRole::Speech};
    m.shape_names = {"only"};
    m.deltas = m.deltas.leftCols(1).eval();
    m.validate();
    Eigen::VectorXd x(1);
    x << 0.6;
    const auto [xav, xv] = partition_coefficients(m, Coefficients(x));
    CHECK(xav.size() == 1);
    CHECK(xv.size() == 0);
    CHECK(xav[0] == 0.6);
}

TEST_CASE("partition/merge round-trips random vectors") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const int k = 2 + static_cast<int>(rng.uniform_index(8));
        BlendshapeModel m = small_model(8, k, 100 + trial);
        m.roles.clear();
        bool any_speech = false, any_non = false;
        for (int j = 0; j < k; ++j) {
            const bool speech = rng.uniform() < 0.5;
            m.roles.push_back(speech ? CoefficientRole::Speech : CoefficientRole::NonSpeech);
            any_speech |= speech;
            any_non |= !speech;
        }
        if (!any_speech) m.roles[0] = CoefficientRole::Speech;
        if (!any_non) m.roles[static_cast<size_t>(k - 1)] = CoefficientRole::NonSpeech;
        Eigen::VectorXd x(k);
        for (int j = 0; j < k; ++j) x[j] = rng.uniform();
        const auto [xav, xv] = partition_coefficients(m, Coefficients(x));
        const Coefficients back = merge_coefficients(m, xav, xv);
        CHECK(back.x == x);
    }
}

TEST_CASE("model validation rejects broken structures") {
    BlendshapeModel m = small_model();
    SUBCASE("duplicate landmark") {
        m.landmark_indices = {1, 1};
        CHECK_THROWS_AS(m.validate(), InvalidArgument);
    }
    SUBCASE("landmark out of range") {
        m.landmark_indices = {99};
        CHECK_THROWS_AS(m.validate(), InvalidArgument);
    }
    SUBCASE("partition missing a role") {
        m.roles.assign(3, CoefficientRole::Speech);
        CHECK_THROWS_AS(m.validate(), InvalidArgument);
    }
    SUBCASE("too few vertices") {
        m.neutral = m.neutral.topRows(3).eval();
        m.deltas = m.deltas.topRows(9).eval();
        m.landmark_indices = {0};
        CHECK_THROWS_AS(m.validate(), InvalidArgument);
    }
}

TEST_CASE("coefficients validation enforces the unit box") {
    Coefficients ok(Eigen::Vector3d(0.0, 0.5, 1.0));
    CHECK_NOTHROW(ok.validate());
    Coefficients bad(Eigen::Vector3d(0.0, 1.2, 0.5));
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("head pose rotation round-trips through the matrix form") {
    HeadPose pose;
    pose.rotation = Eigen::Vector3d(0.2, -0.5, 0.9);
    pose.translation = Eigen::Vector3d(1.0, 2.0, 3.0);
    const HeadPose back = HeadPose::from_matrix(pose.rotation_matrix(), pose.translation);
    CHECK((back.rotation - pose.rotation).norm() < 1e-12);
    CHECK(back.translation == pose.translation);
}

TEST_CASE("model JSON round trip") {
    const BlendshapeModel m = small_model(6, 2, 77);
    const std::string path = "test_model_roundtrip.json";
    save_model_json(m, path);
    const BlendshapeModel back = load_model_json(path);
    CHECK(back.name == m.name);
    CHECK((back.neutral - m.neutral).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.deltas - m.deltas).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(back.roles == m.roles);
    CHECK(back.landmark_indices == m.landmark_indices);
    std::remove(path.c_str());
}

TEST_CASE("OBJ export writes vertices and optional faces") {
    Eigen::MatrixX3d v(3, 3);
    v << 0, 0, 0, 1, 0, 0, 0, 1, 0;
    const std::string path = "test_mesh.obj";
    save_obj(v, {{0, 1, 2}}, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "v 0 0 0");
    std::getline(in, line);
    CHECK(line == "v 1 0 0");
    std::getline(in, line);
    CHECK(line == "v 0 1 0");
    std::getline(in, line);
    CHECK(line == "f 1 2 3");
    in.close();
    std::remove(path.c_str());
}
