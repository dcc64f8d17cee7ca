#include "objbridge/evaluation.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "objbridge/errors.h"
#include "objbridge/format.h"

namespace objbridge {

Actor make_expert_actor() {
    return [](const StepContext& ctx, Rng&) {
        Expert expert(static_cast<Skill>(ctx.instruction.skill_id), ctx.initial_scene,
                      ctx.instruction.name_id);
        return expert.act(ctx.scene, ctx.gripper);
    };
}

Actor make_random_actor() {
    return [](const StepContext&, Rng& rng) {
        return Action(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                      rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    };
}

Actor make_policy_actor(const PolicyParams& params, Ablation ablation) {
    const bool use_bbox = ablation == Ablation::full;
    return [&params, use_bbox](const StepContext& ctx, Rng& rng) {
        RobotForward f;
        forward_robot(params, ctx.image, ctx.proprio, ctx.instruction, use_bbox, f);
        if (params.config.head == ModelConfig::Head::regression) {
            return Action(f.reg.action[0], f.reg.action[1], f.reg.action[2],
                          f.reg.action[3]);
        }
        const std::array<double, 4> box = use_bbox ? f.bb.corners : std::array<double, 4>{};
        const std::array<double, 4> a = diffusion_sample(params, f.trunk, box, rng);
        return Action(a[0], a[1], a[2], a[3]);
    };
}

RolloutResult rollout(const Scene& initial, const Actor& actor, const Instruction& instr,
                      int grid, std::uint64_t seed, int horizon) {
    Rng rng(mix64(seed, 0x726f6c6c));
    Scene scene = initial;
    GripperState gripper = home_gripper(rng);
    const View view;  // identity: the robot camera
    for (int t = 0; t < horizon; ++t) {
        const FeatureImage image = render(scene, view, grid);
        const StepContext ctx{initial, scene, gripper, image, proprio_of(gripper), instr, t};
        const Action a = actor(ctx, rng);
        auto [next_scene, next_gripper] = step_dynamics(scene, gripper, a);
        scene = std::move(next_scene);
        gripper = next_gripper;
    }
    return RolloutResult{std::move(scene), gripper, horizon};
}

int ProtocolReport::trials_per_object() const {
    int t = 0;
    for (const TrialResult& r : rows) t = std::max(t, r.trial + 1);
    return t;
}

int ProtocolReport::recognized(std::span<const int> subset) const {
    int count = 0;
    for (int obj : subset) {
        bool all = true, any = false;
        for (const TrialResult& r : rows) {
            if (r.name_id != obj) continue;
            any = true;
            all = all && r.success;
        }
        if (any && all) ++count;
    }
    return count;
}

std::pair<int, int> ProtocolReport::trial_successes(std::span<const int> subset) const {
    int ok = 0, total = 0;
    for (int obj : subset) {
        for (const TrialResult& r : rows) {
            if (r.name_id != obj) continue;
            ++total;
            ok += r.success ? 1 : 0;
        }
    }
    return {ok, total};
}

TrialResult run_move_trial(const Actor& actor, const std::vector<ObjectSpec>& pool,
                           const ObjectSpec& target, Side side, int trial_index,
                           std::uint64_t scene_seed, int grid) {
    Rng rng(scene_seed);
    // Five distractors for the six-object layout.
    std::vector<ObjectSpec> objs{target};
    std::vector<int> candidates;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].name_id != target.name_id) candidates.push_back(static_cast<int>(i));
    }
    if (candidates.size() < 5) throw UsageError("run_move_trial: pool too small");
    for (int k = 0; k < 5; ++k) {
        const int j = k + rng.uniform_int(static_cast<int>(candidates.size()) - k);
        std::swap(candidates[static_cast<std::size_t>(k)], candidates[static_cast<std::size_t>(j)]);
        objs.push_back(pool[static_cast<std::size_t>(candidates[static_cast<std::size_t>(k)])]);
    }
    Layout layout;
    layout.kind = LayoutKind::move_two_sides;
    layout.target_name_id = target.name_id;
    layout.target_side = side;
    const Scene scene = sample_scene(objs, layout, rng);
    const Instruction instr{static_cast<int>(Skill::move), target.name_id};
    const RolloutResult rr = rollout(scene, actor, instr, grid, scene_seed, kHorizon);

    TrialResult t;
    t.name_id = target.name_id;
    t.trial = trial_index;
    t.side_or_slot = side == Side::left ? "L" : "R";
    t.seed = scene_seed;
    t.final_distance = distance_to_target(rr.final_scene, rr.final_gripper, target.name_id);
    t.nearest_is_target = nearest_object(rr.final_scene, rr.final_gripper) == target.name_id;
    t.success = skill_success(Skill::move, scene, rr.final_scene, rr.final_gripper,
                              target.name_id);
    return t;
}

namespace {

const ObjectSpec& spec_of(const std::vector<ObjectSpec>& pool, int name_id) {
    for (const ObjectSpec& o : pool) {
        if (o.name_id == name_id) return o;
    }
    throw UsageError("object id " + std::to_string(name_id) + " not in the pool");
}

}  // namespace

ProtocolReport eval_move_protocol(const Actor& actor, const std::vector<ObjectSpec>& pool,
                                  const std::vector<int>& id_objects,
                                  const std::vector<int>& ood_objects, int trials,
                                  std::uint64_t protocol_seed, int grid, Parallelism par) {
    if (trials % 2 != 0) throw UsageError("eval_move_protocol: trials must be even");
    ProtocolReport report;
    report.protocol = "move" + std::to_string(trials);
    report.protocol_seed = protocol_seed;
    report.id_objects = id_objects;
    report.ood_objects = ood_objects;
    std::vector<int> objects = id_objects;
    objects.insert(objects.end(), ood_objects.begin(), ood_objects.end());
    report.rows.resize(objects.size() * static_cast<std::size_t>(trials));
    const int n = static_cast<int>(report.rows.size());
    parallel_for(n, par, [&](int i) {
        const int obj = objects[static_cast<std::size_t>(i / trials)];
        const int k = i % trials;
        // Side switching every two trials: L, L, R, R, ...
        const Side side = (k / 2) % 2 == 0 ? Side::left : Side::right;
        const std::uint64_t seed = mix64(protocol_seed, static_cast<std::uint64_t>(obj), k);
        report.rows[static_cast<std::size_t>(i)] =
            run_move_trial(actor, pool, spec_of(pool, obj), side, k, seed, grid);
    });
    return report;
}

ProtocolReport eval_skill_protocol(const Actor& actor, Skill skill,
                                   const std::vector<ObjectSpec>& pool,
                                   const std::vector<int>& id_objects,
                                   const std::vector<int>& ood_objects, int trials,
                                   std::uint64_t protocol_seed, int grid, Parallelism par) {
    if (skill == Skill::move) throw UsageError("use eval_move_protocol for move");
    ProtocolReport report;
    switch (skill) {
        case Skill::rotate: report.protocol = "rotate" + std::to_string(trials); break;
        case Skill::push: report.protocol = "push" + std::to_string(trials); break;
        case Skill::pick_place: report.protocol = "binpick" + std::to_string(trials); break;
        default: break;
    }
    report.protocol_seed = protocol_seed;
    report.id_objects = id_objects;
    report.ood_objects = ood_objects;
    std::vector<int> objects = id_objects;
    objects.insert(objects.end(), ood_objects.begin(), ood_objects.end());
    for (int obj : objects) {
        const ObjectSpec& spec = spec_of(pool, obj);
        if ((skill == Skill::rotate || skill == Skill::pick_place) && !spec.graspable) {
            throw UsageError("object " + spec.name + " is unsuitable for " +
                             skill_name(skill));
        }
        if (skill == Skill::push && !spec.pushable) {
            throw UsageError("object " + spec.name + " is unsuitable for push");
        }
    }
    report.rows.resize(objects.size() * static_cast<std::size_t>(trials));
    const int n = static_cast<int>(report.rows.size());
    parallel_for(n, par, [&](int i) {
        const int obj = objects[static_cast<std::size_t>(i / trials)];
        const int k = i % trials;
        const std::uint64_t seed = mix64(protocol_seed, static_cast<std::uint64_t>(obj), k);
        Rng rng(seed);
        const ObjectSpec& target = spec_of(pool, obj);

        Layout layout;
        std::vector<ObjectSpec> objs{target};
        std::vector<int> cand;
        for (std::size_t pi = 0; pi < pool.size(); ++pi) {
            if (pool[pi].name_id == obj) continue;
            if (skill == Skill::pick_place && !pool[pi].pushable) continue;
            cand.push_back(static_cast<int>(pi));
        }
        const int extras = skill == Skill::pick_place
                               ? 1 + rng.uniform_int(std::min(3, static_cast<int>(cand.size())))
                               : 2;
        if (static_cast<int>(cand.size()) < extras) {
            throw UsageError("eval_skill_protocol: pool too small for distractors");
        }
        for (int e = 0; e < extras; ++e) {
            const int j = e + rng.uniform_int(static_cast<int>(cand.size()) - e);
            std::swap(cand[static_cast<std::size_t>(e)], cand[static_cast<std::size_t>(j)]);
            objs.push_back(pool[static_cast<std::size_t>(cand[static_cast<std::size_t>(e)])]);
        }
        layout.kind = skill == Skill::pick_place ? LayoutKind::binpick_panel
                                                 : LayoutKind::skill_three_slots;
        layout.target_name_id = obj;
        int slot = -1;
        if (layout.kind == LayoutKind::skill_three_slots) {
            slot = k % 3;  // the target visits every slot across the 3 trials
            layout.target_slot = slot;
        }
        const Scene scene = sample_scene(objs, layout, rng);
        const Instruction instr{static_cast<int>(skill), obj};
        const RolloutResult rr = rollout(scene, actor, instr, grid, seed, kHorizon);

        TrialResult t;
        t.name_id = obj;
        t.trial = k;
        t.side_or_slot = slot >= 0 ? std::to_string(slot) : "panel";
        t.seed = seed;
        t.final_distance = distance_to_target(rr.final_scene, rr.final_gripper, obj);
        t.nearest_is_target = nearest_object(rr.final_scene, rr.final_gripper) == obj;
        t.success = skill_success(skill, scene, rr.final_scene, rr.final_gripper, obj);
        report.rows[static_cast<std::size_t>(i)] = t;
    });
    return report;
}

double grounding_accuracy(const PolicyParams& params,
                          std::span<const GroundingSample> samples, double iou_min,
                          Parallelism par) {
    if (samples.empty()) throw UsageError("grounding_accuracy: no samples");
    std::vector<int> hits(samples.size(), 0);
    parallel_for(static_cast<int>(samples.size()), par, [&](int i) {
        const GroundingSample& s = samples[static_cast<std::size_t>(i)];
        const std::array<double, 4> pred = forward_grounding(params, s.image, s.name_id);
        hits[static_cast<std::size_t>(i)] = iou(quantize_box(pred), s.bbox) >= iou_min;
    });
    int ok = 0;
    for (int hit : hits) ok += hit;
    return static_cast<double>(ok) / static_cast<double>(samples.size());
}

void emit_report(std::span<const ProtocolReport> reports, const std::string& csv_path,
                 const std::string& table_path) {
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw UsageError("cannot open " + csv_path);
    csv << "protocol,config,object,trial,side_or_slot,success,final_distance,"
           "nearest_is_target,seed\n";
    for (const ProtocolReport& rep : reports) {
        for (const TrialResult& r : rep.rows) {
            csv << rep.protocol << ',' << rep.config_name << ',' << r.name_id << ','
                << r.trial << ',' << r.side_or_slot << ',' << (r.success ? 1 : 0) << ','
                << double_repr(r.final_distance) << ',' << (r.nearest_is_target ? 1 : 0)
                << ',' << r.seed << '\n';
        }
    }
    if (!csv) throw DataError("report write failed: " + csv_path);

    std::ofstream tab(table_path, std::ios::binary);
    if (!tab) throw UsageError("cannot open " + table_path);
    // Group identical protocols so configurations line up side by side.
    std::vector<std::string> protocols;
    for (const ProtocolReport& rep : reports) {
        if (std::find(protocols.begin(), protocols.end(), rep.protocol) == protocols.end()) {
            protocols.push_back(rep.protocol);
        }
    }
    char buf[256];
    for (const std::string& proto : protocols) {
        tab << "protocol " << proto << "\n";
        tab << "  config            ID            OOD           ckpt             seed\n";
        for (const ProtocolReport& rep : reports) {
            if (rep.protocol != proto) continue;
            std::string id_col, ood_col;
            if (proto.rfind("move", 0) == 0) {
                id_col = std::to_string(rep.recognized(rep.id_objects)) + "/" +
                         std::to_string(rep.id_objects.size()) + " obj";
                ood_col = std::to_string(rep.recognized(rep.ood_objects)) + "/" +
                          std::to_string(rep.ood_objects.size()) + " obj";
            } else {
                const auto [iok, itot] = rep.trial_successes(rep.id_objects);
                const auto [ook, otot] = rep.trial_successes(rep.ood_objects);
                id_col = std::to_string(iok) + "/" + std::to_string(itot);
                ood_col = std::to_string(ook) + "/" + std::to_string(otot);
            }
            std::snprintf(buf, sizeof buf, "  %-16s  %-12s  %-12s  %016llx  %llu\n",
                          rep.config_name.c_str(), id_col.c_str(), ood_col.c_str(),
                          static_cast<unsigned long long>(rep.checkpoint_hash),
                          static_cast<unsigned long long>(rep.protocol_seed));
            tab << buf;
        }
        tab << "\n";
    }
    if (!tab) throw DataError("report write failed: " + table_path);
}

}  // namespace objbridge
