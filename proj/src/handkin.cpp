#include "pimforce/handkin.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

namespace pimforce::handkin {

namespace {

using Eigen::Matrix3d;
using Eigen::Vector3d;

Vector3d to_eigen(const Vec3& v) { return {v[0], v[1], v[2]}; }
Vec3 from_eigen(const Vector3d& v) { return {v.x(), v.y(), v.z()}; }

// Bone lengths per finger: root-to-first, first-to-second, second-to-third,
// third-to-tip.
constexpr std::array<std::array<double, 4>, kNumFingers> kBoneLengths = {{
    {0.5134, 0.4225, 0.3772, 0.3324},  // thumb
    {1.0475, 0.4509, 0.3014, 0.2765},  // index
    {1.0000, 0.5375, 0.3427, 0.3061},  // middle
    {0.9871, 0.5095, 0.3039, 0.2822},  // ring
    {0.9585, 0.3392, 0.2551, 0.2540},  // pinky
}};

// Splay of each finger in the palm plane, radians from +y toward +x
// (the thumb side of a right hand with the palm facing +z).
constexpr std::array<double, kNumFingers> kSplay = {0.75, 0.21, 0.0, -0.19, -0.38};

Matrix3d rot_x(double a) {
    return Eigen::AngleAxisd(a, Vector3d::UnitX()).toRotationMatrix();
}
Matrix3d rot_y(double a) {
    return Eigen::AngleAxisd(a, Vector3d::UnitY()).toRotationMatrix();
}
Matrix3d rot_z(double a) {
    return Eigen::AngleAxisd(a, Vector3d::UnitZ()).toRotationMatrix();
}

Matrix3d euler(const Vec3& t) { return rot_z(t[2]) * rot_x(t[0]) * rot_y(t[1]); }

// Rest orientation of a bone: the rotation taking +y onto `dir`. In-plane
// directions give a pure z rotation.
Matrix3d rest_frame(const Vec3& dir) {
    const Vector3d d = to_eigen(dir).normalized();
    return Eigen::Quaterniond::FromTwoVectors(Vector3d::UnitY(), d).toRotationMatrix();
}

bool finite3(const Vec3& v) {
    return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}

}  // namespace

HandSkeleton HandSkeleton::reference() {
    HandSkeleton s;
    s.parent[kRoot] = -1;
    s.bone_length[kRoot] = 0.0;
    s.rest_direction[kRoot] = {0.0, 1.0, 0.0};
    std::size_t row = 0;
    for (std::size_t f = 0; f < kNumFingers; ++f) {
        const Vec3 dir = {std::sin(kSplay[f]), std::cos(kSplay[f]), 0.0};
        for (std::size_t k = 0; k < 4; ++k) {
            const std::size_t j = 1 + 4 * f + k;
            s.parent[j] = k == 0 ? static_cast<int>(kRoot) : static_cast<int>(j - 1);
            s.bone_length[j] = kBoneLengths[f][k];
            s.rest_direction[j] = dir;
            if (k < 3) s.articulated[row++] = j;
        }
    }
    // The middle finger sits exactly on +y so the reference bone is (0, 1, 0).
    return s;
}

void HandSkeleton::validate() const {
    std::size_t roots = 0;
    for (std::size_t j = 0; j < kNumJoints; ++j) {
        if (parent[j] < 0) {
            ++roots;
            if (j != kRoot) throw InvalidInput("skeleton: only joint 0 may be parentless");
            continue;
        }
        // Parents precede children, which rules out cycles.
        if (static_cast<std::size_t>(parent[j]) >= j)
            throw InvalidInput("skeleton: parent index must precede joint " + std::to_string(j));
        if (!(bone_length[j] > 0.0) || !std::isfinite(bone_length[j]))
            throw InvalidInput("skeleton: bone length must be positive at joint " +
                               std::to_string(j));
        const Vector3d d = to_eigen(rest_direction[j]);
        if (!finite3(rest_direction[j]) || d.norm() < 1e-12)
            throw InvalidInput("skeleton: invalid rest direction at joint " + std::to_string(j));
    }
    if (roots != 1) throw InvalidInput("skeleton: expected exactly one root");
    if (parent[kMiddleMcp] != static_cast<int>(kRoot) || bone_length[kMiddleMcp] != 1.0)
        throw InvalidInput("skeleton: root-to-middle-MCP bone must have length 1.0");
    for (std::size_t r = 0; r < kNumArticulated; ++r) {
        if (articulated[r] == kRoot || articulated[r] >= kNumJoints)
            throw InvalidInput("skeleton: bad articulated joint index");
    }
}

HandSkeleton HandSkeleton::from_json(const nlohmann::json& j) {
    HandSkeleton s;
    const auto parents = j.at("parent").get<std::vector<int>>();
    const auto lengths = j.at("bone_length").get<std::vector<double>>();
    const auto dirs = j.at("rest_direction").get<std::vector<std::array<double, 3>>>();
    const auto art = j.at("articulated").get<std::vector<std::size_t>>();
    if (parents.size() != kNumJoints || lengths.size() != kNumJoints ||
        dirs.size() != kNumJoints || art.size() != kNumArticulated)
        throw InvalidInput("skeleton json: wrong array sizes");
    for (std::size_t i = 0; i < kNumJoints; ++i) {
        s.parent[i] = parents[i];
        s.bone_length[i] = lengths[i];
        s.rest_direction[i] = dirs[i];
    }
    for (std::size_t r = 0; r < kNumArticulated; ++r) s.articulated[r] = art[r];
    s.validate();
    return s;
}

HandSkeleton HandSkeleton::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open skeleton file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("skeleton json: " + std::string(e.what()));
    }
    return from_json(j);
}

nlohmann::json HandSkeleton::to_json() const {
    nlohmann::json j;
    j["parent"] = std::vector<int>(parent.begin(), parent.end());
    j["bone_length"] = std::vector<double>(bone_length.begin(), bone_length.end());
    j["rest_direction"] = std::vector<Vec3>(rest_direction.begin(), rest_direction.end());
    j["articulated"] = std::vector<std::size_t>(articulated.begin(), articulated.end());
    return j;
}

std::vector<std::size_t> validate_angles(const GloveAngles& a, double bound) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < kNumGloveAngles; ++i) {
        if (!std::isfinite(a.values[i]))
            throw InvalidInput("glove angle " + std::to_string(i) + " is not finite");
        if (std::abs(a.values[i]) > bound) out.push_back(i);
    }
    return out;
}

JointRotations glove_to_rotations(const GloveAngles& a) {
    validate_angles(a);
    JointRotations r;
    for (std::size_t f = 0; f < kNumFingers; ++f) {
        const double* g = &a.values[4 * f];
        r.theta[3 * f + 0] = {g[1], 0.0, g[0]};
        r.theta[3 * f + 1] = {g[2], 0.0, 0.0};
        r.theta[3 * f + 2] = {g[3], 0.0, 0.0};
    }
    return r;
}

JointSet forward_kinematics(const JointRotations& theta, const HandSkeleton& skel) {
    for (const auto& t : theta.theta)
        if (!finite3(t)) throw InvalidInput("joint rotations must be finite");

    std::array<int, kNumJoints> row_of{};
    row_of.fill(-1);
    for (std::size_t r = 0; r < kNumArticulated; ++r)
        row_of[skel.articulated[r]] = static_cast<int>(r);

    std::array<Matrix3d, kNumJoints> rest{};
    std::array<Matrix3d, kNumJoints> global{};
    std::array<Vector3d, kNumJoints> pos{};
    rest[kRoot] = Matrix3d::Identity();
    global[kRoot] = row_of[kRoot] >= 0 ? euler(theta.theta[row_of[kRoot]])
                                       : Matrix3d::Identity();
    pos[kRoot] = Vector3d::Zero();

    for (std::size_t j = 1; j < kNumJoints; ++j) {
        const auto p = static_cast<std::size_t>(skel.parent[j]);
        const Vector3d dir = to_eigen(skel.rest_direction[j]).normalized();
        rest[j] = rest_frame(skel.rest_direction[j]);
        // Bone p->j is rest direction expressed in p's rest frame, carried by
        // p's current orientation.
        pos[j] = pos[p] + skel.bone_length[j] * (global[p] * (rest[p].transpose() * dir));
        global[j] = global[p] * (rest[p].transpose() * rest[j]);
        if (row_of[j] >= 0) global[j] = global[j] * euler(theta.theta[row_of[j]]);
    }

    JointSet out;
    out.frame = Frame::Canonical;
    for (std::size_t j = 0; j < kNumJoints; ++j) out.joints[j] = from_eigen(pos[j]);
    return out;
}

namespace {

struct Anchors {
    Vector3d axis;    // unit root -> middle MCP
    Vector3d normal;  // unit normal of the anchor plane
    double scale;     // root -> middle MCP distance
};

Anchors anchors_of(const std::array<Vec3, kNumJoints>& j) {
    const Vector3d root = to_eigen(j[kRoot]);
    const Vector3d m = to_eigen(j[kMiddleMcp]) - root;
    const Vector3d i = to_eigen(j[kIndexMcp]) - root;
    const double mn = m.norm();
    const double in = i.norm();
    if (!(mn > 1e-12) || !(in > 1e-12)) throw DegeneratePose("anchor joints coincide");
    const Vector3d n = m.cross(i);
    // Collinearity test on the sine of the anchor angle.
    if (!(n.norm() > 1e-9 * mn * in)) throw DegeneratePose("anchor joints are collinear");
    return {m / mn, n.normalized(), mn};
}

}  // namespace

JointSet canonicalize(const JointSet& raw, const HandSkeleton& skel) {
    for (const auto& p : raw.joints)
        if (!finite3(p)) throw InvalidInput("joint positions must be finite");

    const JointSet ref = forward_kinematics(JointRotations{}, skel);
    const Anchors src = anchors_of(raw.joints);
    const Anchors dst = anchors_of(ref.joints);

    // Step 1: align the root->middle-MCP axes.
    const Matrix3d r1 = Eigen::Quaterniond::FromTwoVectors(src.axis, dst.axis).toRotationMatrix();
    // Step 2: spin about the aligned axis until the plane normals agree.
    const Vector3d n1 = r1 * src.normal;
    const Vector3d nproj = (n1 - n1.dot(dst.axis) * dst.axis).normalized();
    const double angle = std::atan2(dst.axis.dot(nproj.cross(dst.normal)), nproj.dot(dst.normal));
    const Matrix3d r2 = Eigen::AngleAxisd(angle, dst.axis).toRotationMatrix();
    const Matrix3d rot = r2 * r1;

    const double s = dst.scale / src.scale;
    const Vector3d root = to_eigen(raw.joints[kRoot]);
    const Vector3d origin = to_eigen(ref.joints[kRoot]);

    JointSet out;
    out.frame = Frame::Canonical;
    for (std::size_t j = 0; j < kNumJoints; ++j)
        out.joints[j] = from_eigen(origin + s * (rot * (to_eigen(raw.joints[j]) - root)));
    out.joints[kRoot] = from_eigen(origin);
    return out;
}

bool is_canonical(const JointSet& j, const HandSkeleton& skel, double tol) {
    const JointSet ref = forward_kinematics(JointRotations{}, skel);
    for (std::size_t k : {kRoot, kMiddleMcp}) {
        for (std::size_t d = 0; d < 3; ++d)
            if (std::abs(j.joints[k][d] - ref.joints[k][d]) > tol) return false;
    }
    try {
        const Anchors a = anchors_of(j.joints);
        const Anchors b = anchors_of(ref.joints);
        return (a.normal - b.normal).norm() <= tol;
    } catch (const DegeneratePose&) {
        return false;
    }
}

}  // namespace pimforce::handkin
