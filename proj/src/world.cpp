#include "objbridge/world.h"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "objbridge/errors.h"

namespace objbridge {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Drawn radii stay well above the cell half-diagonal of the default 16-grid
// so every disc covers at least one cell center and boxes remain learnable.
constexpr double kRadiusLo = 0.055;
constexpr double kRadiusHi = 0.085;
constexpr double kGraspableProb = 0.8;
constexpr double kPushableProb = 0.8;

constexpr double kSeparationMargin = 1e-9;

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

double clamp(double x, double lo, double hi) { return std::min(hi, std::max(lo, x)); }

double dist(double ax, double ay, double bx, double by) {
    return std::hypot(ax - bx, ay - by);
}

}  // namespace

double wrap_angle(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a < 0) a += 2.0 * kPi;
    return a - kPi;
}

int Scene::index_of(int name_id) const {
    for (std::size_t i = 0; i < placements.size(); ++i) {
        if (placements[i].object.name_id == name_id) return static_cast<int>(i);
    }
    return -1;
}

Action::Action(double dx_, double dy_, double dtheta_, double grip_)
    : dx(clamp(dx_, -1.0, 1.0)),
      dy(clamp(dy_, -1.0, 1.0)),
      dtheta(clamp(dtheta_, -1.0, 1.0)),
      grip(clamp(grip_, -1.0, 1.0)) {}

const char* skill_name(Skill s) {
    switch (s) {
        case Skill::move: return "move";
        case Skill::push: return "push";
        case Skill::rotate: return "rotate";
        case Skill::pick_place: return "pick_place";
    }
    return "?";
}

Skill skill_from_name(const std::string& s) {
    if (s == "move") return Skill::move;
    if (s == "push") return Skill::push;
    if (s == "rotate") return Skill::rotate;
    if (s == "pick_place" || s == "binpick") return Skill::pick_place;
    throw UsageError("unknown skill: " + s);
}

Rect default_bin_region() { return Rect{0.70, 0.70, 0.92, 0.92}; }

// ---- vocabulary -------------------------------------------------------------

std::vector<ObjectSpec> make_vocabulary(std::uint64_t seed, int count,
                                        const std::vector<std::string>& names,
                                        int attr_dim) {
    if (count != static_cast<int>(names.size())) {
        throw UsageError("make_vocabulary: count does not match name list length");
    }
    std::vector<ObjectSpec> out;
    out.reserve(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        const std::string& name = names[i];
        if (name.empty()) throw UsageError("make_vocabulary: empty name");
        for (char c : name) {
            if (std::isspace(static_cast<unsigned char>(c)) ||
                std::isupper(static_cast<unsigned char>(c))) {
                throw UsageError("make_vocabulary: name must be a lowercase token: " + name);
            }
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (names[j] == name) throw UsageError("make_vocabulary: duplicate name: " + name);
        }
        // Attributes depend on (seed, name) only, never on list order. The
        // radius tracks the first attribute: an object's size is part of its
        // appearance, not an arbitrary hidden quantity.
        Rng rng(mix64(seed, fnv1a(name)));
        ObjectSpec spec;
        spec.name = name;
        spec.name_id = static_cast<int>(i);
        spec.attributes.resize(attr_dim);
        for (double& a : spec.attributes) a = rng.uniform(-1.0, 1.0);
        spec.radius =
            kRadiusLo + (spec.attributes[0] + 1.0) / 2.0 * (kRadiusHi - kRadiusLo);
        spec.graspable = rng.bernoulli(kGraspableProb);
        spec.pushable = rng.bernoulli(kPushableProb);
        out.push_back(std::move(spec));
    }
    return out;
}

// ---- scene sampling ---------------------------------------------------------

namespace {

bool overlaps_any(const std::vector<Placement>& placed, double x, double y, double r) {
    for (const Placement& p : placed) {
        if (dist(x, y, p.pose.x, p.pose.y) < r + p.object.radius + kSeparationMargin) {
            return true;
        }
    }
    return false;
}

struct Band {
    double x_lo, x_hi, y_lo, y_hi;
};

Placement place_in_band(const ObjectSpec& obj, const Band& band,
                        const std::vector<Placement>& placed, Rng& rng, int& budget) {
    while (budget > 0) {
        --budget;
        const double x = rng.uniform(std::max(band.x_lo, obj.radius),
                                     std::min(band.x_hi, 1.0 - obj.radius));
        const double y = rng.uniform(std::max(band.y_lo, obj.radius),
                                     std::min(band.y_hi, 1.0 - obj.radius));
        if (overlaps_any(placed, x, y, obj.radius)) continue;
        return Placement{obj, Pose{x, y, rng.uniform(-kPi, kPi)}};
    }
    throw PlacementError("sample_scene: placement attempts exhausted");
}

}  // namespace

Scene sample_scene(const std::vector<ObjectSpec>& objects, const Layout& layout,
                   Rng& rng, int max_attempts) {
    const int target_pos = [&] {
        for (std::size_t i = 0; i < objects.size(); ++i) {
            if (objects[i].name_id == layout.target_name_id) return static_cast<int>(i);
        }
        throw UsageError("sample_scene: target object not in object list");
    }();

    int budget = max_attempts;
    Scene scene;

    switch (layout.kind) {
        case LayoutKind::move_two_sides: {
            if (objects.size() < 6) {
                throw UsageError("move_two_sides needs at least 6 objects");
            }
            const Side tside = layout.target_side.value_or(
                rng.bernoulli(0.5) ? Side::left : Side::right);
            const int half = static_cast<int>(objects.size()) / 2;
            // Shuffle the distractors, then fill the target's side first.
            std::vector<int> rest;
            for (std::size_t i = 0; i < objects.size(); ++i) {
                if (static_cast<int>(i) != target_pos) rest.push_back(static_cast<int>(i));
            }
            for (int i = static_cast<int>(rest.size()) - 1; i > 0; --i) {
                std::swap(rest[i], rest[rng.uniform_int(i + 1)]);
            }
            const Band left{0.075, 0.47, 0.28, 0.88};
            const Band right{0.53, 0.925, 0.28, 0.88};
            const Band& tband = (tside == Side::left) ? left : right;
            const Band& oband = (tside == Side::left) ? right : left;
            scene.placements.push_back(
                place_in_band(objects[target_pos], tband, scene.placements, rng, budget));
            for (std::size_t i = 0; i < rest.size(); ++i) {
                const Band& band = static_cast<int>(i) < half - 1 ? tband : oband;
                scene.placements.push_back(
                    place_in_band(objects[rest[i]], band, scene.placements, rng, budget));
            }
            break;
        }
        case LayoutKind::skill_three_slots: {
            if (objects.size() != 3) {
                throw UsageError("skill_three_slots needs exactly 3 objects");
            }
            const double slots[3] = {0.25, 0.5, 0.75};
            const int tslot = layout.target_slot.value_or(rng.uniform_int(3));
            if (tslot < 0 || tslot > 2) throw UsageError("target slot must be 0, 1 or 2");
            std::vector<int> order(3);
            std::vector<int> rest;
            for (int i = 0; i < 3; ++i) {
                if (i != target_pos) rest.push_back(i);
            }
            if (rng.bernoulli(0.5)) std::swap(rest[0], rest[1]);
            order[tslot] = target_pos;
            for (int s = 0, r = 0; s < 3; ++s) {
                if (s != tslot) order[s] = rest[r++];
            }
            for (int s = 0; s < 3; ++s) {
                const Band band{slots[s] - 0.03, slots[s] + 0.03, 0.38, 0.55};
                scene.placements.push_back(
                    place_in_band(objects[order[s]], band, scene.placements, rng, budget));
            }
            break;
        }
        case LayoutKind::binpick_panel: {
            if (objects.size() < 2) {
                throw UsageError("binpick_panel needs at least 2 objects");
            }
            scene.bin_region = default_bin_region();
            // Objects start on the panel, left of the bin.
            const Band panel{0.075, 0.60, 0.18, 0.86};
            scene.placements.push_back(
                place_in_band(objects[target_pos], panel, scene.placements, rng, budget));
            for (std::size_t i = 0; i < objects.size(); ++i) {
                if (static_cast<int>(i) == target_pos) continue;
                scene.placements.push_back(
                    place_in_band(objects[i], panel, scene.placements, rng, budget));
            }
            break;
        }
    }
    return scene;
}

Scene scatter_scene(const std::vector<ObjectSpec>& objects, Rng& rng, int max_attempts) {
    Scene scene;
    int budget = max_attempts;
    const Band table{0.0, 1.0, 0.0, 1.0};
    for (const ObjectSpec& obj : objects) {
        scene.placements.push_back(place_in_band(obj, table, scene.placements, rng, budget));
    }
    return scene;
}

// ---- rendering --------------------------------------------------------------

namespace {

Pose apply_view(const View& v, const Pose& p) {
    return Pose{0.5 + (p.x - 0.5) * v.zoom + v.tx, 0.5 + (p.y - 0.5) * v.zoom + v.ty,
                p.theta};
}

}  // namespace

FeatureImage render(const Scene& scene, const View& view, int grid) {
    int attr_dim = 8;
    if (!scene.placements.empty()) {
        attr_dim = static_cast<int>(scene.placements.front().object.attributes.size());
    }
    FeatureImage img;
    img.g = grid;
    img.channels = attr_dim + 1;
    img.background = view.background;
    img.values.assign(static_cast<std::size_t>(grid) * grid * img.channels, 0.0);

    // Empty cells carry zero attributes and the background offset in the
    // occupancy channel; occupied cells carry the attributes and occupancy 1.
    for (int iy = 0; iy < grid; ++iy) {
        for (int ix = 0; ix < grid; ++ix) {
            img.cell(iy, ix)[attr_dim] = view.background;
        }
    }
    for (const Placement& p : scene.placements) {
        const Pose q = apply_view(view, p.pose);
        const double r = p.object.radius * view.zoom;
        const int lo_x = std::max(0, static_cast<int>(std::floor((q.x - r) * grid - 0.5)));
        const int hi_x = std::min(grid - 1, static_cast<int>(std::ceil((q.x + r) * grid)));
        const int lo_y = std::max(0, static_cast<int>(std::floor((q.y - r) * grid - 0.5)));
        const int hi_y = std::min(grid - 1, static_cast<int>(std::ceil((q.y + r) * grid)));
        for (int iy = lo_y; iy <= hi_y; ++iy) {
            const double cy = (iy + 0.5) / grid;
            for (int ix = lo_x; ix <= hi_x; ++ix) {
                const double cx = (ix + 0.5) / grid;
                if (dist(cx, cy, q.x, q.y) <= r) {
                    double* cell = img.cell(iy, ix);
                    for (int c = 0; c < attr_dim; ++c) cell[c] = p.object.attributes[c];
                    cell[attr_dim] = 1.0;
                }
            }
        }
    }
    return img;
}

std::array<double, 4> ground_truth_bbox(const Scene& scene, int name_id, const View& view) {
    const int idx = scene.index_of(name_id);
    if (idx < 0) throw UsageError("ground_truth_bbox: object not in scene");
    const Placement& p = scene.placements[static_cast<std::size_t>(idx)];
    const Pose q = apply_view(view, p.pose);
    const double r = p.object.radius * view.zoom;
    return {clamp(q.x - r, 0.0, 1.0), clamp(q.y - r, 0.0, 1.0),
            clamp(q.x + r, 0.0, 1.0), clamp(q.y + r, 0.0, 1.0)};
}

// ---- dynamics ---------------------------------------------------------------

namespace {

void clamp_object(Placement& p) {
    p.pose.x = clamp(p.pose.x, p.object.radius, 1.0 - p.object.radius);
    p.pose.y = clamp(p.pose.y, p.object.radius, 1.0 - p.object.radius);
}

// Push `p` out of the disc at (cx, cy, min_d) along the contact normal.
void push_out(Placement& p, double cx, double cy, double min_d) {
    double dx = p.pose.x - cx;
    double dy = p.pose.y - cy;
    double d = std::hypot(dx, dy);
    if (d < 1e-12) {
        dx = 1.0;
        dy = 0.0;
        d = 1.0;
    }
    const double target = min_d + kSeparationMargin;
    p.pose.x = cx + dx / d * target;
    p.pose.y = cy + dy / d * target;
    clamp_object(p);
}

// Separate two free objects symmetrically.
void split_apart(Placement& a, Placement& b) {
    double dx = b.pose.x - a.pose.x;
    double dy = b.pose.y - a.pose.y;
    double d = std::hypot(dx, dy);
    if (d < 1e-12) {
        dx = 1.0;
        dy = 0.0;
        d = 1.0;
    }
    const double need = (a.object.radius + b.object.radius + kSeparationMargin - d) / 2.0;
    a.pose.x -= dx / d * need;
    a.pose.y -= dy / d * need;
    b.pose.x += dx / d * need;
    b.pose.y += dy / d * need;
    clamp_object(a);
    clamp_object(b);
}

// Position-based overlap resolution. Free pushable objects yield to the
// gripper disc and the held object; the gripper (with its held object)
// yields to anything it cannot displace.
void resolve_contacts(Scene& s, GripperState& g) {
    const bool fist = g.closed && g.held < 0;
    for (int iter = 0; iter < 1000; ++iter) {
        bool moved = false;
        // Gripper fist pushes pushable objects.
        if (fist) {
            for (Placement& p : s.placements) {
                if (!p.object.pushable) continue;
                const double min_d = kGripperRadius + p.object.radius;
                if (dist(g.x, g.y, p.pose.x, p.pose.y) < min_d) {
                    push_out(p, g.x, g.y, min_d);
                    moved = true;
                }
            }
        }
        if (g.held >= 0) {
            Placement& held = s.placements[static_cast<std::size_t>(g.held)];
            // The held disc displaces pushable objects in its way.
            for (std::size_t i = 0; i < s.placements.size(); ++i) {
                if (static_cast<int>(i) == g.held) continue;
                Placement& p = s.placements[i];
                if (!p.object.pushable) continue;
                const double min_d = held.object.radius + p.object.radius;
                if (dist(held.pose.x, held.pose.y, p.pose.x, p.pose.y) < min_d) {
                    push_out(p, held.pose.x, held.pose.y, min_d);
                    moved = true;
                }
            }
            // Anything still overlapping blocks the gripper: back it off.
            for (std::size_t i = 0; i < s.placements.size(); ++i) {
                if (static_cast<int>(i) == g.held) continue;
                Placement& p = s.placements[i];
                const double min_d = held.object.radius + p.object.radius;
                const double d =
                    dist(held.pose.x, held.pose.y, p.pose.x, p.pose.y);
                if (d < min_d) {
                    double nx = held.pose.x - p.pose.x;
                    double ny = held.pose.y - p.pose.y;
                    double n = std::hypot(nx, ny);
                    if (n < 1e-12) {
                        nx = 1.0;
                        ny = 0.0;
                        n = 1.0;
                    }
                    const double back = min_d + kSeparationMargin - d;
                    held.pose.x += nx / n * back;
                    held.pose.y += ny / n * back;
                    clamp_object(held);
                    g.x = held.pose.x;
                    g.y = held.pose.y;
                    moved = true;
                }
            }
        }
        // Residual object/object overlaps from chained pushes.
        for (std::size_t i = 0; i < s.placements.size(); ++i) {
            for (std::size_t j = i + 1; j < s.placements.size(); ++j) {
                if (static_cast<int>(i) == g.held || static_cast<int>(j) == g.held) continue;
                Placement& a = s.placements[i];
                Placement& b = s.placements[j];
                if (dist(a.pose.x, a.pose.y, b.pose.x, b.pose.y) <
                    a.object.radius + b.object.radius) {
                    split_apart(a, b);
                    moved = true;
                }
            }
        }
        if (!moved) return;
    }
}

}  // namespace

std::pair<Scene, GripperState> step_dynamics(const Scene& scene,
                                             const GripperState& gripper,
                                             const Action& a) {
    Scene s = scene;
    GripperState g = gripper;

    const double dth = a.dtheta * kThetaScale;
    g.x = clamp(g.x + a.dx * kActionScale, 0.0, 1.0);
    g.y = clamp(g.y + a.dy * kActionScale, 0.0, 1.0);
    g.theta = wrap_angle(g.theta + dth);

    if (a.grip <= -0.5) {
        // Fingers capture only as they close; an already-closed fist shoves
        // objects instead of re-grasping whatever it plows into.
        const bool closing_now = !g.closed;
        g.closed = true;
        if (closing_now && g.held < 0) {
            int best = -1;
            double best_d = kGraspRadius;
            for (std::size_t i = 0; i < s.placements.size(); ++i) {
                const Placement& p = s.placements[i];
                if (!p.object.graspable) continue;
                const double d = dist(g.x, g.y, p.pose.x, p.pose.y);
                if (d <= best_d) {
                    best_d = d;
                    best = static_cast<int>(i);
                }
            }
            g.held = best;
        }
    } else if (a.grip >= 0.5) {
        g.closed = false;
        g.held = -1;
    }

    if (g.held >= 0) {
        // Rigid follow; the carried object must stay fully on the table.
        Placement& held = s.placements[static_cast<std::size_t>(g.held)];
        g.x = clamp(g.x, held.object.radius, 1.0 - held.object.radius);
        g.y = clamp(g.y, held.object.radius, 1.0 - held.object.radius);
        held.pose.x = g.x;
        held.pose.y = g.y;
        held.pose.theta = wrap_angle(held.pose.theta + dth);
    }

    resolve_contacts(s, g);
    return {std::move(s), g};
}

GripperState home_gripper(Rng& rng) {
    // Start anywhere in the lower half-ish of the table: approaches then come
    // from many directions, so the goal region is surrounded by data.
    GripperState g;
    g.x = rng.uniform(0.15, 0.85);
    g.y = rng.uniform(0.05, 0.45);
    g.theta = 0.0;
    g.closed = false;
    g.held = -1;
    return g;
}

// ---- scripted experts ---------------------------------------------------------

namespace {

// Proportional gain, as a fraction of the full step per unit error. Kept
// moderate: a gentler ramp near the goal is what a small regression head can
// actually reproduce, and the horizon still has ample slack.
constexpr double kExpertGain = 0.5;

Action go_to(const GripperState& g, double tx, double ty, double grip) {
    return Action(kExpertGain * (tx - g.x) / kActionScale,
                  kExpertGain * (ty - g.y) / kActionScale, 0.0, grip);
}

constexpr double kOpen = 1.0;
constexpr double kClose = -1.0;
constexpr double kCloseApproach = 0.02;  // inside the grasp radius with margin
constexpr double kPushGap = 0.025;       // staging distance below contact
constexpr double kPushOvershoot = 0.005;

}  // namespace

Expert::Expert(Skill skill, const Scene& initial, int target_name_id)
    : skill_(skill), target_(target_name_id) {
    const int idx = initial.index_of(target_name_id);
    if (idx < 0) throw UsageError("expert: target not in scene");
    const Placement& p = initial.placements[static_cast<std::size_t>(idx)];
    start_pose_ = p.pose;
    if ((skill == Skill::rotate || skill == Skill::pick_place) && !p.object.graspable) {
        throw UsageError("expert: target is not graspable");
    }
    if (skill == Skill::push && !p.object.pushable) {
        throw UsageError("expert: target is not pushable");
    }
    if (skill == Skill::pick_place) {
        if (!initial.bin_region) throw UsageError("expert: pick_place needs a bin region");
        bin_ = *initial.bin_region;
    }
    goal_theta_ = start_pose_.theta + kRotateGoal;
}

Action Expert::act(const Scene& s, const GripperState& g) const {
    switch (skill_) {
        case Skill::move: return act_move(s, g);
        case Skill::push: return act_push(s, g);
        case Skill::rotate: return act_rotate(s, g);
        case Skill::pick_place: return act_pick_place(s, g);
    }
    return Action();
}

Action Expert::act_move(const Scene& s, const GripperState& g) const {
    const Placement& t = s.placements[static_cast<std::size_t>(s.index_of(target_))];
    return go_to(g, t.pose.x, t.pose.y, 0.0);
}

Action Expert::act_push(const Scene& s, const GripperState& g) const {
    const Placement& t = s.placements[static_cast<std::size_t>(s.index_of(target_))];
    const double pushed = t.pose.y - start_pose_.y;
    if (pushed >= kPushDistance + kPushOvershoot) {
        return Action(0.0, 0.0, 0.0, kOpen);  // done; open so the dwell is inert
    }
    const double contact = kGripperRadius + t.object.radius;
    const double staging_y = t.pose.y - contact - kPushGap;
    const bool aligned = std::abs(g.x - t.pose.x) <= 0.006;
    const bool below = g.y <= t.pose.y - contact + 1e-9;
    if (aligned && below) {
        // Advance with a closed fist; contact resolution carries the object.
        return Action(kExpertGain * (t.pose.x - g.x) / kActionScale, 1.0, 0.0, kClose);
    }
    // Reach the staging point open; an open gripper passes over everything.
    return go_to(g, t.pose.x, staging_y, kOpen);
}

Action Expert::act_rotate(const Scene& s, const GripperState& g) const {
    const int idx = s.index_of(target_);
    const Placement& t = s.placements[static_cast<std::size_t>(idx)];
    const double err = wrap_angle(goal_theta_ - t.pose.theta);
    if (g.held == idx) {
        if (std::abs(err) <= 0.08) return Action(0.0, 0.0, 0.0, kOpen);  // release
        return Action(0.0, 0.0, kExpertGain * err / kThetaScale, kClose);
    }
    if (std::abs(err) <= 0.13) {
        return Action(0.0, 0.0, 0.0, kOpen);  // already rotated; dwell, never re-grasp
    }
    if (!g.closed) {
        const double d = dist(g.x, g.y, t.pose.x, t.pose.y);
        if (d <= kCloseApproach) return Action(0.0, 0.0, 0.0, kClose);
        return go_to(g, t.pose.x, t.pose.y, kOpen);
    }
    // Closed but holding nothing (or the wrong thing): reset and retry.
    return Action(0.0, 0.0, 0.0, kOpen);
}

Action Expert::act_pick_place(const Scene& s, const GripperState& g) const {
    const int idx = s.index_of(target_);
    const Placement& t = s.placements[static_cast<std::size_t>(idx)];
    const double bx = (bin_.x1 + bin_.x2) / 2.0;
    const double by = (bin_.y1 + bin_.y2) / 2.0;
    if (g.held == idx) {
        // The drop zone is wide; release as soon as the centroid is safely
        // inside (a shoved distractor can block the path to the center).
        const bool inside = g.x >= bin_.x1 + 0.02 && g.x <= bin_.x2 - 0.02 &&
                            g.y >= bin_.y1 + 0.02 && g.y <= bin_.y2 - 0.02;
        if (inside) return Action(0.0, 0.0, 0.0, kOpen);
        return Action(1.6 * kExpertGain * (bx - g.x) / kActionScale,
                      1.6 * kExpertGain * (by - g.y) / kActionScale, 0.0, kClose);
    }
    if (bin_.contains(t.pose.x, t.pose.y)) {
        return Action(0.0, 0.0, 0.0, kOpen);  // placed; dwell
    }
    if (!g.closed) {
        const double d = dist(g.x, g.y, t.pose.x, t.pose.y);
        if (d <= kCloseApproach) return Action(0.0, 0.0, 0.0, kClose);
        return go_to(g, t.pose.x, t.pose.y, kOpen);
    }
    return Action(0.0, 0.0, 0.0, kOpen);
}

Action expert_policy(Skill skill, const Scene& initial, const Scene& scene,
                     const GripperState& gripper, int target_name_id) {
    return Expert(skill, initial, target_name_id).act(scene, gripper);
}

}  // namespace objbridge
