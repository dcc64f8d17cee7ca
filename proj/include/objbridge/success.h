#pragma once

#include "objbridge/world.h"

namespace objbridge {

// Per-skill success predicates over (initial scene, final state). These are
// the evaluation-side criteria; the scripted experts and the generated demos
// are checked against the same functions.
//
//   move:       gripper hovers within kHoverRadius of the target center and
//               the target is the strict nearest object.
//   push:       target moved >= +0.10 in y with |dx| <= 0.05.
//   rotate:     target theta advanced by +pi/2 within +-0.26 rad and the
//               gripper ended released.
//   pick_place: target centroid inside the bin region and the gripper open.
bool skill_success(Skill skill, const Scene& initial, const Scene& final_scene,
                   const GripperState& final_gripper, int target_name_id);

// move helpers exposed for reporting (final distance, nearest object).
double distance_to_target(const Scene& scene, const GripperState& g, int target_name_id);
int nearest_object(const Scene& scene, const GripperState& g);  // name_id, -1 if empty

}  // namespace objbridge
