#include "objbridge/success.h"

#include <cmath>

#include "objbridge/errors.h"

namespace objbridge {

double distance_to_target(const Scene& scene, const GripperState& g, int target_name_id) {
    const int idx = scene.index_of(target_name_id);
    if (idx < 0) throw UsageError("distance_to_target: target not in scene");
    const Pose& p = scene.placements[static_cast<std::size_t>(idx)].pose;
    return std::hypot(p.x - g.x, p.y - g.y);
}

int nearest_object(const Scene& scene, const GripperState& g) {
    int best = -1;
    double best_d = 0.0;
    for (const Placement& p : scene.placements) {
        const double d = std::hypot(p.pose.x - g.x, p.pose.y - g.y);
        if (best < 0 || d < best_d) {
            best = p.object.name_id;
            best_d = d;
        }
    }
    return best;
}

bool skill_success(Skill skill, const Scene& initial, const Scene& final_scene,
                   const GripperState& g, int target_name_id) {
    const int idx0 = initial.index_of(target_name_id);
    const int idx1 = final_scene.index_of(target_name_id);
    if (idx0 < 0 || idx1 < 0) throw UsageError("skill_success: target not in scene");
    const Pose& p0 = initial.placements[static_cast<std::size_t>(idx0)].pose;
    const Pose& p1 = final_scene.placements[static_cast<std::size_t>(idx1)].pose;

    switch (skill) {
        case Skill::move: {
            const double d = std::hypot(p1.x - g.x, p1.y - g.y);
            if (d > kHoverRadius) return false;
            // Strict nearest: every other object must be farther than the target.
            for (const Placement& p : final_scene.placements) {
                if (p.object.name_id == target_name_id) continue;
                if (std::hypot(p.pose.x - g.x, p.pose.y - g.y) <= d) return false;
            }
            return true;
        }
        case Skill::push:
            return (p1.y - p0.y) >= kPushDistance &&
                   std::abs(p1.x - p0.x) <= kPushLateralTol;
        case Skill::rotate:
            return std::abs(wrap_angle(p1.theta - p0.theta - kRotateGoal)) <= kRotateTol &&
                   !g.closed;
        case Skill::pick_place: {
            if (!final_scene.bin_region) {
                throw UsageError("skill_success: pick_place needs a bin region");
            }
            return final_scene.bin_region->contains(p1.x, p1.y) && !g.closed;
        }
    }
    return false;
}

}  // namespace objbridge
