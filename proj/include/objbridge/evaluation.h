#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "objbridge/datagen.h"
#include "objbridge/policy.h"
#include "objbridge/success.h"
#include "objbridge/training.h"

namespace objbridge {

// What a controller sees each step. Learned policies consume only the
// rendered image, proprio and instruction; the oracle controllers (scripted
// expert, chance baseline) are allowed the scene geometry.
struct StepContext {
    const Scene& initial_scene;
    const Scene& scene;
    const GripperState& gripper;
    const FeatureImage& image;
    std::array<double, 5> proprio;
    Instruction instruction;
    int t = 0;
};

using Actor = std::function<Action(const StepContext&, Rng&)>;

Actor make_expert_actor();
Actor make_random_actor();
// Closed-loop policy: encode/bbox/trunk each step, injection per ablation,
// action from the configured head (diffusion sampling draws from the rng).
Actor make_policy_actor(const PolicyParams& params, Ablation ablation);

struct RolloutResult {
    Scene final_scene;
    GripperState final_gripper;
    int steps = 0;
};

RolloutResult rollout(const Scene& initial, const Actor& actor, const Instruction& instr,
                      int grid, std::uint64_t seed, int horizon = kHorizon);

struct TrialResult {
    int name_id = 0;
    int trial = 0;
    std::string side_or_slot;
    bool success = false;
    double final_distance = 0.0;
    bool nearest_is_target = false;
    std::uint64_t seed = 0;
};

struct ProtocolReport {
    std::string protocol;     // move4 | rotate3 | push3 | binpick3 | grounding
    std::string config_name;  // full | no_bbox | robot_only | expert | random
    std::uint64_t checkpoint_hash = 0;
    std::uint64_t protocol_seed = 0;
    std::vector<int> id_objects, ood_objects;  // partition of the evaluated set
    std::vector<TrialResult> rows;

    int trials_per_object() const;
    // All-or-nothing object counting (the move criterion).
    int recognized(std::span<const int> subset) const;
    // Trial counting (the skill tables): {successes, total}.
    std::pair<int, int> trial_successes(std::span<const int> subset) const;
};

// One move trial: derived scene with the target on the given side plus five
// distractors from the pool, closed-loop rollout, hover-and-nearest check.
TrialResult run_move_trial(const Actor& actor, const std::vector<ObjectSpec>& pool,
                           const ObjectSpec& target, Side side, int trial_index,
                           std::uint64_t scene_seed, int grid);

// 4 trials per object, sides L, L, R, R; an object is recognized only if all
// four succeed. Scene seeds derive from (protocol_seed, object, trial) so
// every configuration sees identical scenes.
ProtocolReport eval_move_protocol(const Actor& actor, const std::vector<ObjectSpec>& pool,
                                  const std::vector<int>& id_objects,
                                  const std::vector<int>& ood_objects, int trials,
                                  std::uint64_t protocol_seed, int grid,
                                  Parallelism par = Parallelism::serial);

// rotate / push / pick_place, 3 trials per object, per-trial counting.
ProtocolReport eval_skill_protocol(const Actor& actor, Skill skill,
                                   const std::vector<ObjectSpec>& pool,
                                   const std::vector<int>& id_objects,
                                   const std::vector<int>& ood_objects, int trials,
                                   std::uint64_t protocol_seed, int grid,
                                   Parallelism par = Parallelism::serial);

double grounding_accuracy(const PolicyParams& params,
                          std::span<const GroundingSample> samples, double iou_min = 0.5,
                          Parallelism par = Parallelism::serial);

// CSV (one row per trial) plus a side-by-side text table of the configs.
void emit_report(std::span<const ProtocolReport> reports, const std::string& csv_path,
                 const std::string& table_path);

}  // namespace objbridge
