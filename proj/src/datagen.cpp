#include "objbridge/datagen.h"

#include <algorithm>
#include <cmath>

#include "objbridge/errors.h"
#include "objbridge/success.h"

namespace objbridge {

namespace {

constexpr int kMaxDistractors = 4;
constexpr int kDwellSteps = 5;  // inert goal-state anchors recorded after success

int clamp_bin(double v) {
    return std::max(0, std::min(999, static_cast<int>(std::llround(v))));
}

// Distinct distractor picks from vocab, excluding `skip_id`.
std::vector<ObjectSpec> pick_distractors(const std::vector<ObjectSpec>& vocab,
                                         int skip_id, int count, Rng& rng,
                                         bool pushable_only = false) {
    std::vector<int> pool;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        if (vocab[i].name_id == skip_id) continue;
        if (pushable_only && !vocab[i].pushable) continue;
        pool.push_back(static_cast<int>(i));
    }
    count = std::min<int>(count, static_cast<int>(pool.size()));
    std::vector<ObjectSpec> out;
    for (int k = 0; k < count; ++k) {
        const int j = k + rng.uniform_int(static_cast<int>(pool.size()) - k);
        std::swap(pool[k], pool[j]);
        out.push_back(vocab[pool[k]]);
    }
    return out;
}

GroundingSample make_grounding_sample(const std::vector<ObjectSpec>& vocab,
                                      const ObjectSpec& target, const ViewDist& views,
                                      int grid, Rng rng) {
    Scene scene;
    View view;
    std::array<double, 4> hull{};
    // Re-draw until the disc survives the view fully; accept a clipped box as
    // a last resort.
    for (int attempt = 0; attempt < 20; ++attempt) {
        std::vector<ObjectSpec> objs{target};
        const int extras = rng.uniform_int(kMaxDistractors + 1);
        for (ObjectSpec& d : pick_distractors(vocab, target.name_id, extras, rng)) {
            objs.push_back(std::move(d));
        }
        scene = scatter_scene(objs, rng);
        view = views.sample(rng);
        hull = ground_truth_bbox(scene, target.name_id, view);
        const double w = hull[2] - hull[0];
        if (w >= 2.0 * target.radius * view.zoom - 1e-9) break;
    }
    GroundingSample s;
    s.image = render(scene, view, grid);
    s.name_id = target.name_id;
    s.bbox = quantize_box(hull);
    s.question = question_for(target.name);
    s.reasoning = serialize_reasoning(target.name, s.bbox);
    return s;
}

}  // namespace

std::array<double, 5> proprio_of(const GripperState& g) {
    return {g.x, g.y, std::sin(g.theta), std::cos(g.theta), g.closed ? 1.0 : 0.0};
}

View ViewDist::sample(Rng& rng) const {
    View v;
    v.tx = rng.uniform(-t_max, t_max);
    v.ty = rng.uniform(-t_max, t_max);
    v.zoom = rng.uniform(zoom_lo, zoom_hi);
    v.background = rng.uniform(bg_lo, bg_hi);
    return v;
}

ViewDist ViewDist::robot_camera() { return ViewDist{0.03, 0.97, 1.03, 0.0, 0.0}; }

ViewDist ViewDist::smartphone() { return ViewDist{0.10, 0.90, 1.10, -0.20, 0.20}; }

std::vector<GroundingSample> gen_grounding_set(const std::vector<ObjectSpec>& vocab,
                                               int images_per_object,
                                               const ViewDist& views, int grid,
                                               std::uint64_t seed, Parallelism par) {
    if (images_per_object < 1) throw UsageError("gen_grounding_set: images_per_object < 1");
    const int n = static_cast<int>(vocab.size()) * images_per_object;
    std::vector<GroundingSample> out(static_cast<std::size_t>(n));
    parallel_for(n, par, [&](int i) {
        const int oi = i / images_per_object;
        const int shot = i % images_per_object;
        out[static_cast<std::size_t>(i)] =
            make_grounding_sample(vocab, vocab[static_cast<std::size_t>(oi)], views, grid,
                                  Rng(mix64(seed, vocab[static_cast<std::size_t>(oi)].name_id,
                                            shot)));
    });
    return out;
}

BBox noisy_detector(const Scene& scene, int name_id, const View& view,
                    const DetectorNoise& noise, Rng& rng) {
    const int idx = scene.index_of(name_id);
    if (idx < 0) throw UsageError("noisy_detector: object not in scene");
    if (noise.sigma_bins < 0.0 || noise.p_wrong < 0.0 || noise.p_wrong >= 1.0) {
        throw UsageError("noisy_detector: invalid noise parameters");
    }
    if (rng.bernoulli(noise.p_wrong)) {
        if (scene.placements.size() >= 2) {
            int other = rng.uniform_int(static_cast<int>(scene.placements.size()) - 1);
            if (other >= idx) ++other;
            return quantize_box(ground_truth_bbox(
                scene, scene.placements[static_cast<std::size_t>(other)].object.name_id,
                view));
        }
        // Single-object scene: an arbitrary valid box.
        int xs[2] = {rng.uniform_int(1000), rng.uniform_int(1000)};
        int ys[2] = {rng.uniform_int(1000), rng.uniform_int(1000)};
        return BBox{std::min(xs[0], xs[1]), std::min(ys[0], ys[1]),
                    std::max(xs[0], xs[1]), std::max(ys[0], ys[1])};
    }
    const BBox truth = quantize_box(ground_truth_bbox(scene, name_id, view));
    if (noise.sigma_bins == 0.0) return truth;
    int x1 = clamp_bin(truth.x1 + noise.sigma_bins * rng.normal());
    int y1 = clamp_bin(truth.y1 + noise.sigma_bins * rng.normal());
    int x2 = clamp_bin(truth.x2 + noise.sigma_bins * rng.normal());
    int y2 = clamp_bin(truth.y2 + noise.sigma_bins * rng.normal());
    return BBox{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
}

BBox verify_and_correct(const BBox& proposed, const BBox& truth, double iou_min) {
    return iou(proposed, truth) >= iou_min ? proposed : truth;
}

namespace {

Episode roll_episode(const std::vector<ObjectSpec>& vocab, const ObjectSpec& target,
                     const EpisodeGenConfig& cfg, Rng rng) {
    Layout layout;
    std::vector<ObjectSpec> objs{target};
    switch (cfg.skill) {
        case Skill::move: {
            layout.kind = LayoutKind::move_two_sides;
            layout.target_side = rng.bernoulli(0.5) ? Side::left : Side::right;
            for (ObjectSpec& d : pick_distractors(vocab, target.name_id, 5, rng)) {
                objs.push_back(std::move(d));
            }
            break;
        }
        case Skill::push:
        case Skill::rotate: {
            layout.kind = LayoutKind::skill_three_slots;
            layout.target_slot = rng.uniform_int(3);
            for (ObjectSpec& d : pick_distractors(vocab, target.name_id, 2, rng)) {
                objs.push_back(std::move(d));
            }
            break;
        }
        case Skill::pick_place: {
            layout.kind = LayoutKind::binpick_panel;
            // Pushable distractors only: a carried disc shoves them aside
            // instead of blocking the carry path.
            const int extras = 1 + rng.uniform_int(3);
            for (ObjectSpec& d :
                 pick_distractors(vocab, target.name_id, extras, rng, true)) {
                objs.push_back(std::move(d));
            }
            if (objs.size() < 2) throw UsageError("binpick needs a pushable distractor");
            break;
        }
    }
    layout.target_name_id = target.name_id;
    const Scene initial = sample_scene(objs, layout, rng);
    GripperState gripper = home_gripper(rng);

    // One annotated view per episode (step 0), detector + verification.
    const View view;  // robot camera, identity
    const BBox truth = quantize_box(ground_truth_bbox(initial, target.name_id, view));
    const BBox det = noisy_detector(initial, target.name_id, view, cfg.noise, rng);
    const BBox annotated = verify_and_correct(det, truth, cfg.verify_iou_min);

    Episode ep;
    ep.skill_id = static_cast<int>(cfg.skill);
    ep.target_name_id = target.name_id;
    const std::string reasoning = serialize_reasoning(target.name, annotated);
    const Instruction instr{static_cast<int>(cfg.skill), target.name_id};

    Expert expert(cfg.skill, initial, target.name_id);
    Scene scene = initial;
    int dwell_left = -1;
    for (int t = 0; t < kHorizon; ++t) {
        RobotStep step;
        step.action = expert.act(scene, gripper);
        // Keep rolling a little past the bare success threshold: the recorded
        // states must reach all the way into the goal region, otherwise the
        // cloned stopping point floats just outside it.
        const bool settled =
            std::max({std::abs(step.action.dx), std::abs(step.action.dy),
                      std::abs(step.action.dtheta)}) <= 0.10;
        if (dwell_left < 0 && settled &&
            skill_success(cfg.skill, initial, scene, gripper, target.name_id)) {
            dwell_left = kDwellSteps;
        }
        if (dwell_left == 0) break;
        if (dwell_left > 0) --dwell_left;
        step.image = render(scene, view, cfg.grid);
        step.proprio = proprio_of(gripper);
        step.instruction = instr;
        step.reasoning = reasoning;
        Action executed = step.action;
        if (cfg.action_noise > 0.0) {
            executed = Action(step.action.dx + cfg.action_noise * rng.normal(),
                              step.action.dy + cfg.action_noise * rng.normal(),
                              step.action.dtheta + cfg.action_noise * rng.normal(),
                              step.action.grip);
        }
        auto [next_scene, next_gripper] = step_dynamics(scene, gripper, executed);
        scene = std::move(next_scene);
        gripper = next_gripper;
        ep.steps.push_back(std::move(step));
    }
    ep.success = skill_success(cfg.skill, initial, scene, gripper, target.name_id);
    return ep;
}

Episode generate_episode(const std::vector<ObjectSpec>& vocab, const ObjectSpec& target,
                         const EpisodeGenConfig& cfg, Rng rng) {
    // Exploration noise occasionally spoils a roll; retry on a child stream.
    for (int attempt = 0; attempt < 20; ++attempt) {
        Episode ep = roll_episode(vocab, target, cfg, rng.child(attempt));
        if (ep.success && !ep.steps.empty()) return ep;
    }
    throw UsageError("expert failed to reach success within the horizon (target " +
                     target.name + ")");
}

}  // namespace

std::vector<Episode> gen_robot_episodes(const std::vector<ObjectSpec>& id_vocab,
                                        const EpisodeGenConfig& cfg, Parallelism par) {
    for (const ObjectSpec& o : id_vocab) {
        if ((cfg.skill == Skill::rotate || cfg.skill == Skill::pick_place) && !o.graspable) {
            throw UsageError("gen_robot_episodes: " + o.name + " is not graspable");
        }
        if (cfg.skill == Skill::push && !o.pushable) {
            throw UsageError("gen_robot_episodes: " + o.name + " is not pushable");
        }
    }
    const int n = static_cast<int>(id_vocab.size()) * cfg.demos_per_object;
    std::vector<Episode> out(static_cast<std::size_t>(n));
    parallel_for(n, par, [&](int i) {
        const int oi = i / cfg.demos_per_object;
        const int demo = i % cfg.demos_per_object;
        out[static_cast<std::size_t>(i)] = generate_episode(
            id_vocab, id_vocab[static_cast<std::size_t>(oi)], cfg,
            Rng(mix64(cfg.seed, static_cast<std::uint64_t>(cfg.skill) * 1000 +
                                    id_vocab[static_cast<std::size_t>(oi)].name_id,
                      demo)));
    });
    return out;
}

std::vector<ObjectSpec> make_reserved_objects(std::uint64_t seed,
                                              const std::vector<std::string>& names,
                                              const std::vector<ObjectSpec>& existing,
                                              int first_reserved_id, int attr_dim) {
    for (const std::string& n : names) {
        for (const ObjectSpec& e : existing) {
            if (e.name == n) throw UsageError("reserved object name collides: " + n);
        }
    }
    std::vector<ObjectSpec> fresh =
        make_vocabulary(seed, static_cast<int>(names.size()), names, attr_dim);
    for (std::size_t i = 0; i < fresh.size(); ++i) {
        fresh[i].name_id = first_reserved_id + static_cast<int>(i);
        for (const ObjectSpec& e : existing) {
            if (e.name_id == fresh[i].name_id) {
                throw UsageError("reserved slot id collides with the vocabulary");
            }
        }
    }
    return fresh;
}

std::vector<GroundingSample> gen_smartphone_set(const std::vector<ObjectSpec>& new_vocab,
                                                const std::vector<ObjectSpec>& existing,
                                                int images_per_object,
                                                const ViewDist& shift, int grid,
                                                std::uint64_t seed, Parallelism par) {
    for (const ObjectSpec& n : new_vocab) {
        for (const ObjectSpec& e : existing) {
            if (e.name == n.name || e.name_id == n.name_id) {
                throw UsageError("gen_smartphone_set: vocabulary collision: " + n.name);
            }
        }
    }
    return gen_grounding_set(new_vocab, images_per_object, shift, grid, seed, par);
}

}  // namespace objbridge
