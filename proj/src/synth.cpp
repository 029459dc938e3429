#include "wip/synth.hpp"

#include <cmath>
#include <random>

namespace wip {

MotionKind motion_kind_from_string(const std::string& name) {
    if (name == "walk") return MotionKind::walk;
    if (name == "arm_swing") return MotionKind::arm_swing;
    if (name == "squat") return MotionKind::squat;
    if (name == "turn") return MotionKind::turn;
    if (name == "figure8") return MotionKind::figure8;
    throw InvalidInputError("generate_synthetic: unknown kind '" + name + "'");
}

std::string to_string(MotionKind kind) {
    switch (kind) {
        case MotionKind::walk: return "walk";
        case MotionKind::arm_swing: return "arm_swing";
        case MotionKind::squat: return "squat";
        case MotionKind::turn: return "turn";
        case MotionKind::figure8: return "figure8";
    }
    return "?";
}

namespace {

using Mat3 = std::array<double, 9>;

Mat3 rotz(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {c, -s, 0, s, c, 0, 0, 0, 1};
}

Mat3 rotx(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {1, 0, 0, 0, c, -s, 0, s, c};
}

Mat3 mul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                r[size_t(3 * i + j)] += a[size_t(3 * i + k)] * b[size_t(3 * k + j)];
    return r;
}

Vec3 apply(const Mat3& m, const Vec3& p) {
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2],
            m[3] * p[0] + m[4] * p[1] + m[5] * p[2],
            m[6] * p[0] + m[7] * p[1] + m[8] * p[2]};
}

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 scl(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// Segment lengths / offsets (meters). Head sits ~0.55 above the pelvis joint.
constexpr double kThigh = 0.38;
constexpr double kShank = 0.40;
constexpr double kHipLat = 0.09;
constexpr double kHipDrop = 0.06;
constexpr double kAnkleHeight = 0.08;
constexpr double kToeForward = 0.14;
constexpr double kPelvisHeight = 0.836;

// Knee position for a hip->ankle two-bone chain bending toward `bend_dir`.
Vec3 solve_knee(const Vec3& hip, const Vec3& ankle, const Vec3& bend_dir) {
    Vec3 ha = sub(ankle, hip);
    const double d = norm(ha);
    if (d >= kThigh + kShank || d <= std::abs(kThigh - kShank))
        throw NumericError("generate_synthetic: leg target out of reach");
    const Vec3 u = scl(ha, 1.0 / d);
    Vec3 v = sub(bend_dir, scl(u, dot(bend_dir, u)));
    const double vn = norm(v);
    if (vn < 1e-9) throw NumericError("generate_synthetic: degenerate knee bend direction");
    v = scl(v, 1.0 / vn);
    const double a = (kThigh * kThigh - kShank * kShank + d * d) / (2.0 * d);
    const double h = std::sqrt(std::max(0.0, kThigh * kThigh - a * a));
    return add(hip, add(scl(u, a), scl(v, h)));
}

struct GaitParams {
    double speed = 0.9;       // m/s along the path
    double step_freq = 1.8;   // cycles/s per leg
    double duty = 0.6;        // stance fraction of a cycle
    double lift = 0.05;       // swing apex height of the toe
    double arm_amp = 0.25;    // arm pitch amplitude (rad)
    bool stepping = true;     // false: both feet stay planted
};

struct PathPoint {
    Vec3 pos;        // pelvis XY at z=0
    double heading;  // yaw
};

double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

}  // namespace

MotionSequence generate_synthetic(MotionKind kind, double duration_s, double fps, uint64_t seed) {
    if (duration_s <= 0.0) throw InvalidInputError("generate_synthetic: duration must be > 0");
    if (fps <= 0.0) throw InvalidInputError("generate_synthetic: fps must be > 0");

    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    GaitParams gait;
    gait.speed = 0.55 + 0.1 * u01(rng);
    gait.step_freq = 1.7 + 0.2 * u01(rng);
    const double heading0 = 2.0 * M_PI * u01(rng);
    const double squat_freq = 0.4 + 0.1 * u01(rng);
    const double arm_freq = 0.8 + 0.2 * u01(rng);

    const double fig8_a = 0.7;
    const double fig8_period = 10.0;  // loop period, keeps foot targets reachable
    const double turn_rate = 2.0 * M_PI / std::max(duration_s, 4.0);

    auto path_at = [&](double t) -> PathPoint {
        PathPoint p;
        switch (kind) {
            case MotionKind::walk: {
                p.heading = heading0;
                p.pos = {gait.speed * t * std::cos(heading0), gait.speed * t * std::sin(heading0), 0.0};
                break;
            }
            case MotionKind::figure8: {
                const double w = 2.0 * M_PI / fig8_period;
                const double u = w * t;
                p.pos = {fig8_a * std::sin(u), fig8_a * std::sin(u) * std::cos(u), 0.0};
                const double dx = fig8_a * w * std::cos(u);
                const double dy = fig8_a * w * std::cos(2.0 * u);
                p.heading = std::atan2(dy, dx);
                break;
            }
            case MotionKind::turn: {
                p.pos = {0.0, 0.0, 0.0};
                p.heading = heading0 + turn_rate * t;
                break;
            }
            default: {  // arm_swing, squat: standing in place
                p.pos = {0.0, 0.0, 0.0};
                p.heading = heading0;
                break;
            }
        }
        return p;
    };

    if (kind == MotionKind::arm_swing || kind == MotionKind::squat) gait.stepping = false;
    if (kind == MotionKind::arm_swing) gait.arm_amp = 1.0;
    if (kind == MotionKind::turn) gait.speed = 0.0;

    // Toe target per leg: fixed plant point during stance, smooth arc between
    // consecutive plants during swing. Plant k is taken from the path at the
    // middle of its stance phase.
    auto plant_pos = [&](int leg, int cycle) -> Vec3 {
        const double phase0 = leg == 0 ? 0.0 : 0.5;
        const double t_mid = (static_cast<double>(cycle) + 0.5 * gait.duty - phase0) / gait.step_freq;
        const PathPoint pp = path_at(t_mid);
        const double lat = leg == 0 ? 0.11 : -0.11;
        const Vec3 off = apply(rotz(pp.heading), Vec3{lat, 0.02, 0.0});
        return {pp.pos[0] + off[0], pp.pos[1] + off[1], 0.0};
    };

    auto toe_at = [&](int leg, double t) -> Vec3 {
        if (!gait.stepping) {
            const double lat = leg == 0 ? 0.11 : -0.11;
            const Vec3 off = apply(rotz(heading0), Vec3{lat, 0.05, 0.0});
            return {off[0], off[1], 0.0};
        }
        const double phase0 = leg == 0 ? 0.0 : 0.5;
        const double phi = t * gait.step_freq + phase0;
        const int cycle = static_cast<int>(std::floor(phi));
        const double tau = phi - std::floor(phi);
        if (tau < gait.duty) return plant_pos(leg, cycle);
        const double u = (tau - gait.duty) / (1.0 - gait.duty);
        const Vec3 a = plant_pos(leg, cycle);
        const Vec3 b = plant_pos(leg, cycle + 1);
        const double s = smoothstep(u);
        Vec3 p = add(scl(a, 1.0 - s), scl(b, s));
        p[2] = gait.lift * std::sin(M_PI * u);
        return p;
    };

    const int frames = std::max(1, static_cast<int>(std::llround(duration_s * fps)));
    MotionSequence seq;
    seq.fps = fps;
    seq.frames.reserve(static_cast<size_t>(frames));

    const SkeletonSpec spec = SkeletonSpec::human();

    for (int fi = 0; fi < frames; ++fi) {
        const double t = static_cast<double>(fi) / fps;
        const PathPoint pp = path_at(t);
        const Mat3 yaw = rotz(pp.heading);
        const double gait_phase = 2.0 * M_PI * gait.step_freq * t;

        double pelvis_z = kPelvisHeight;
        if (gait.stepping) pelvis_z += 0.012 * std::sin(2.0 * gait_phase);
        if (kind == MotionKind::squat)
            pelvis_z -= 0.17 * 0.5 * (1.0 - std::cos(2.0 * M_PI * squat_freq * t));
        const Vec3 pelvis = {pp.pos[0], pp.pos[1], pelvis_z};

        // Torso leans forward a touch and sways with the gait.
        const double sway = gait.stepping ? 0.04 * std::sin(gait_phase) : 0.02 * std::sin(2.0 * M_PI * arm_freq * t);
        const Mat3 torso = mul(yaw, mul(rotx(0.05), rotz(sway)));

        PoseFrame f;
        f.points.assign(static_cast<size_t>(spec.num_joints()), Vec3{0, 0, 0});
        f.node_labels = spec.joint_names;
        auto set = [&](const char* name, const Vec3& p) {
            f.points[static_cast<size_t>(spec.joint_index(name))] = p;
        };

        set("pelvis", pelvis);
        const Vec3 hip_l = add(pelvis, apply(yaw, Vec3{kHipLat, 0.0, -kHipDrop}));
        const Vec3 hip_r = add(pelvis, apply(yaw, Vec3{-kHipLat, 0.0, -kHipDrop}));
        set("left_hip", hip_l);
        set("right_hip", hip_r);

        const Vec3 forward = apply(yaw, Vec3{0.0, 1.0, 0.0});
        for (int leg = 0; leg < 2; ++leg) {
            const Vec3 toe = toe_at(leg, t);
            const Vec3 ankle = add(toe, apply(yaw, Vec3{0.0, -kToeForward, kAnkleHeight}));
            const Vec3& hip = leg == 0 ? hip_l : hip_r;
            const Vec3 knee = solve_knee(hip, ankle, forward);
            set(leg == 0 ? "left_knee" : "right_knee", knee);
            set(leg == 0 ? "left_ankle" : "right_ankle", ankle);
            set(leg == 0 ? "left_foot" : "right_foot", toe);
        }

        const Vec3 spine1 = add(pelvis, apply(torso, Vec3{0.0, 0.0, 0.10}));
        const Vec3 spine2 = add(spine1, apply(torso, Vec3{0.0, 0.0, 0.12}));
        const Vec3 spine3 = add(spine2, apply(torso, Vec3{0.0, 0.0, 0.13}));
        const Vec3 neck = add(spine3, apply(torso, Vec3{0.0, 0.0, 0.11}));
        const Mat3 head_rot = mul(torso, rotx(-0.03));
        const Vec3 head = add(neck, apply(head_rot, Vec3{0.0, 0.0, 0.09}));
        set("spine1", spine1);
        set("spine2", spine2);
        set("spine3", spine3);
        set("neck", neck);
        set("head", head);

        const Vec3 collar_l = add(spine3, apply(torso, Vec3{0.085, 0.0, 0.03}));
        const Vec3 collar_r = add(spine3, apply(torso, Vec3{-0.085, 0.0, 0.03}));
        set("left_collar", collar_l);
        set("right_collar", collar_r);
        const Vec3 shoulder_l = add(collar_l, apply(torso, Vec3{0.095, 0.0, 0.0}));
        const Vec3 shoulder_r = add(collar_r, apply(torso, Vec3{-0.095, 0.0, 0.0}));
        set("left_shoulder", shoulder_l);
        set("right_shoulder", shoulder_r);

        for (int side = 0; side < 2; ++side) {
            double swing;
            if (kind == MotionKind::arm_swing) {
                swing = gait.arm_amp * std::sin(2.0 * M_PI * arm_freq * t + (side == 0 ? 0.0 : M_PI));
            } else if (kind == MotionKind::squat) {
                swing = -0.8 * 0.5 * (1.0 - std::cos(2.0 * M_PI * squat_freq * t));
            } else {
                // Arms counter-swing the same-side leg.
                swing = gait.arm_amp * std::sin(gait_phase + (side == 0 ? M_PI : 0.0));
            }
            const Mat3 arm = mul(torso, rotx(swing));
            const Mat3 fore = mul(arm, rotx(-0.35 - 0.1 * std::sin(gait_phase)));
            const Vec3& sh = side == 0 ? shoulder_l : shoulder_r;
            const Vec3 elbow = add(sh, apply(arm, Vec3{side == 0 ? 0.03 : -0.03, 0.0, -0.26}));
            const Vec3 wrist = add(elbow, apply(fore, Vec3{0.0, 0.0, -0.25}));
            const Vec3 hand = add(wrist, apply(fore, Vec3{0.0, 0.02, -0.08}));
            set(side == 0 ? "left_elbow" : "right_elbow", elbow);
            set(side == 0 ? "left_wrist" : "right_wrist", wrist);
            set(side == 0 ? "left_hand" : "right_hand", hand);
        }

        seq.frames.push_back(std::move(f));
    }
    return seq;
}

}  // namespace wip
