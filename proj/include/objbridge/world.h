#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "objbridge/rng.h"

namespace objbridge {

// Motion and interaction constants (table units / radians per step).
inline constexpr double kActionScale = 0.05;   // max translation per step
inline constexpr double kThetaScale = 0.2;     // max rotation per step
inline constexpr double kGraspRadius = 0.03;   // close within this of a center grasps
inline constexpr double kGripperRadius = 0.02; // pushing disc of a closed empty gripper
inline constexpr double kHoverRadius = 0.05;   // "moved to" hover criterion
inline constexpr int kHorizon = 40;            // rollout length cap

// Push / rotate success margins.
inline constexpr double kPushDistance = 0.10;
inline constexpr double kPushLateralTol = 0.05;
inline constexpr double kRotateGoal = 1.5707963267948966;  // +pi/2, counterclockwise
inline constexpr double kRotateTol = 0.26;

struct ObjectSpec {
    std::string name;                 // lowercase token, no whitespace
    int name_id = 0;                  // dense in [0, V)
    std::vector<double> attributes;   // each component in [-1, 1]
    double radius = 0.05;             // in (0, 0.1]
    bool graspable = false;
    bool pushable = false;

    bool operator==(const ObjectSpec&) const = default;
};

double wrap_angle(double a);  // into [-pi, pi)

struct Pose {
    double x = 0.0, y = 0.0;
    double theta = 0.0;  // wrapped into [-pi, pi)
    bool operator==(const Pose&) const = default;
};

struct Rect {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
    bool contains(double x, double y) const {
        return x >= x1 && x <= x2 && y >= y1 && y <= y2;
    }
    bool operator==(const Rect&) const = default;
};

struct Placement {
    ObjectSpec object;
    Pose pose;
    bool operator==(const Placement&) const = default;
};

struct Scene {
    std::vector<Placement> placements;
    std::optional<Rect> bin_region;

    int index_of(int name_id) const;  // -1 when absent
    bool operator==(const Scene&) const = default;
};

struct GripperState {
    double x = 0.5, y = 0.08;
    double theta = 0.0;
    bool closed = false;
    int held = -1;  // index into Scene.placements, or -1
    bool operator==(const GripperState&) const = default;
};

struct Action {
    double dx = 0.0, dy = 0.0, dtheta = 0.0, grip = 0.0;  // all clamped to [-1, 1]

    Action() = default;
    Action(double dx_, double dy_, double dtheta_, double grip_);
    bool operator==(const Action&) const = default;
};

// Camera analog: zoom about the table center, then translate; the
// background offset shifts the occupancy channel of empty cells.
struct View {
    double tx = 0.0, ty = 0.0;
    double zoom = 1.0;
    double background = 0.0;
    bool operator==(const View&) const = default;
};

struct FeatureImage {
    int g = 0;         // grid side
    int channels = 0;  // attr_dim + 1 (occupancy last)
    std::vector<double> values;  // row-major [iy][ix][channel]
    double background = 0.0;

    double* cell(int iy, int ix) {
        return values.data() + (static_cast<std::size_t>(iy) * g + ix) * channels;
    }
    const double* cell(int iy, int ix) const {
        return values.data() + (static_cast<std::size_t>(iy) * g + ix) * channels;
    }
    bool operator==(const FeatureImage&) const = default;
};

enum class Skill { move = 0, push = 1, rotate = 2, pick_place = 3 };

const char* skill_name(Skill s);
Skill skill_from_name(const std::string& s);  // throws UsageError

enum class Side { left, right };

enum class LayoutKind { move_two_sides, skill_three_slots, binpick_panel };

struct Layout {
    LayoutKind kind = LayoutKind::move_two_sides;
    int target_name_id = -1;
    std::optional<Side> target_side;  // move_two_sides only
    std::optional<int> target_slot;   // skill_three_slots: 0 left, 1 center, 2 right
};

// Fixed bin used by every binpick_panel scene.
Rect default_bin_region();

// ---- operations -----------------------------------------------------------

// Deterministic vocabulary: attribute vectors, radii and skill flags are a
// pure function of (seed, name). count must equal names.size().
std::vector<ObjectSpec> make_vocabulary(std::uint64_t seed, int count,
                                        const std::vector<std::string>& names,
                                        int attr_dim = 8);

// Rejection-samples placements until the layout rule and the non-overlap /
// in-table invariants hold (max_attempts per scene before PlacementError).
Scene sample_scene(const std::vector<ObjectSpec>& objects, const Layout& layout,
                   Rng& rng, int max_attempts = 1000);

// Free placement anywhere on the table; used for grounding imagery.
Scene scatter_scene(const std::vector<ObjectSpec>& objects, Rng& rng,
                    int max_attempts = 1000);

FeatureImage render(const Scene& scene, const View& view, int grid = 16);

// Axis-aligned hull of the object disc after the view transform, clipped to
// [0,1]; normalized coordinates (x1, y1, x2, y2).
std::array<double, 4> ground_truth_bbox(const Scene& scene, int name_id,
                                        const View& view);

// Kinematic step. An open gripper passes over objects (a top-down gripper
// straddles a disc); a closed empty gripper pushes pushable objects; a held
// object follows the gripper rigidly and displaces other objects in its way.
std::pair<Scene, GripperState> step_dynamics(const Scene& scene,
                                             const GripperState& gripper,
                                             const Action& action);

GripperState home_gripper(Rng& rng);  // bottom-center start with small jitter

// Scripted expert. Captures the episode's initial scene because push and
// rotate goals are displacements from it; per-step output is a pure function
// of (initial scene, current scene, gripper).
class Expert {
public:
    Expert(Skill skill, const Scene& initial, int target_name_id);
    Action act(const Scene& scene, const GripperState& gripper) const;

    Skill skill() const { return skill_; }
    int target() const { return target_; }

private:
    Action act_move(const Scene& s, const GripperState& g) const;
    Action act_push(const Scene& s, const GripperState& g) const;
    Action act_rotate(const Scene& s, const GripperState& g) const;
    Action act_pick_place(const Scene& s, const GripperState& g) const;

    Skill skill_;
    int target_ = -1;
    Pose start_pose_;       // target pose in the initial scene
    double goal_theta_ = 0; // rotate: start theta + pi/2
    Rect bin_;              // pick_place drop zone
};

// Convenience wrapper matching the one-shot controller shape.
Action expert_policy(Skill skill, const Scene& initial, const Scene& scene,
                     const GripperState& gripper, int target_name_id);

}  // namespace objbridge
