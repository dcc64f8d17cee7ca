#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "objbridge/codec.h"
#include "objbridge/parallel.h"
#include "objbridge/world.h"

namespace objbridge {

struct GroundingSample {
    FeatureImage image;
    std::string question;   // question_for(name)
    std::string reasoning;  // serialize_reasoning(name, bbox)
    int name_id = 0;
    BBox bbox;
    bool operator==(const GroundingSample&) const = default;
};

struct Instruction {
    int skill_id = 0;
    int name_id = 0;
    bool operator==(const Instruction&) const = default;
};

struct RobotStep {
    FeatureImage image;
    std::array<double, 5> proprio{};  // x, y, sin(theta), cos(theta), closed
    Instruction instruction;
    std::string reasoning;
    Action action;
    bool operator==(const RobotStep&) const = default;
};

struct Episode {
    std::vector<RobotStep> steps;
    int skill_id = 0;
    int target_name_id = 0;
    bool success = false;
    bool operator==(const Episode&) const = default;
};

std::array<double, 5> proprio_of(const GripperState& g);

// Uniform view distribution used when "photographing" grounding scenes.
struct ViewDist {
    double t_max = 0.03;
    double zoom_lo = 0.97, zoom_hi = 1.03;
    double bg_lo = 0.0, bg_hi = 0.0;

    View sample(Rng& rng) const;

    // Mild jitter, no background shift: imagery from the robot's own camera.
    static ViewDist robot_camera();
    // Wider translation/zoom plus a background offset: handheld captures
    // taken away from the robot cell.
    static ViewDist smartphone();
};

struct DetectorNoise {
    double sigma_bins = 5.0;  // Gaussian jitter per coordinate, in bins
    double p_wrong = 0.05;    // probability of boxing a different object
};

// One grounding sample per (object, shot): fresh scene with 0-4 distractors
// under a jittered view, box from the simulator oracle.
std::vector<GroundingSample> gen_grounding_set(const std::vector<ObjectSpec>& vocab,
                                               int images_per_object,
                                               const ViewDist& views, int grid,
                                               std::uint64_t seed,
                                               Parallelism par = Parallelism::serial);

// Annotation stand-in for an open-vocabulary detector: usually the true
// quantized hull with bin jitter, sometimes another object's hull entirely.
BBox noisy_detector(const Scene& scene, int name_id, const View& view,
                    const DetectorNoise& noise, Rng& rng);

// The manual-verification pass: keep the proposal when it overlaps the truth
// well enough, otherwise correct it to the truth.
BBox verify_and_correct(const BBox& proposed, const BBox& truth, double iou_min = 0.5);

struct EpisodeGenConfig {
    Skill skill = Skill::move;
    int demos_per_object = 40;
    DetectorNoise noise;
    double verify_iou_min = 0.5;
    int grid = 16;
    std::uint64_t seed = 0;
    // Exploration noise on the executed translation/rotation during the demo
    // roll; the recorded labels stay the expert's clean actions, so states
    // around the nominal path appear with corrective supervision.
    double action_noise = 0.35;
};

// Expert demonstrations with per-step reasoning. The reasoning box is
// annotated once per episode from the step-0 view and reused for every step.
std::vector<Episode> gen_robot_episodes(const std::vector<ObjectSpec>& id_vocab,
                                        const EpisodeGenConfig& cfg,
                                        Parallelism par = Parallelism::serial);

// Reserved-slot objects for continual learning; names must not collide with
// the existing vocabulary.
std::vector<ObjectSpec> make_reserved_objects(std::uint64_t seed,
                                              const std::vector<std::string>& names,
                                              const std::vector<ObjectSpec>& existing,
                                              int first_reserved_id, int attr_dim = 8);

// Smartphone-style captures of the reserved objects: same schema as
// gen_grounding_set but under the shifted view distribution.
std::vector<GroundingSample> gen_smartphone_set(const std::vector<ObjectSpec>& new_vocab,
                                                const std::vector<ObjectSpec>& existing,
                                                int images_per_object,
                                                const ViewDist& shift, int grid,
                                                std::uint64_t seed,
                                                Parallelism par = Parallelism::serial);

}  // namespace objbridge
