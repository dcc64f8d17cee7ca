#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "objbridge/errors.h"
#include "objbridge/success.h"
#include "objbridge/world.h"

using namespace objbridge;

namespace {

std::vector<std::string> names(int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back("obj" + std::to_string(i));
    return out;
}

ObjectSpec disc(int id, double x, double y, double radius, bool graspable = true,
                bool pushable = true) {
    ObjectSpec o;
    o.name = "d" + std::to_string(id);
    o.name_id = id;
    o.attributes = {0.5, -0.5, 0.25};
    o.radius = radius;
    o.graspable = graspable;
    o.pushable = pushable;
    (void)x;
    (void)y;
    return o;
}

Scene one_object_scene(double x, double y, double radius, bool graspable = true,
                       bool pushable = true) {
    Scene s;
    s.placements.push_back({disc(0, x, y, radius, graspable, pushable), Pose{x, y, 0.0}});
    return s;
}

bool scene_invariants_hold(const Scene& s) {
    for (std::size_t i = 0; i < s.placements.size(); ++i) {
        const Placement& a = s.placements[i];
        if (a.pose.x < a.object.radius - 1e-9 || a.pose.x > 1.0 - a.object.radius + 1e-9 ||
            a.pose.y < a.object.radius - 1e-9 || a.pose.y > 1.0 - a.object.radius + 1e-9) {
            return false;
        }
        if (a.pose.theta < -3.1415926536 || a.pose.theta >= 3.1415926536) return false;
        for (std::size_t j = i + 1; j < s.placements.size(); ++j) {
            const Placement& b = s.placements[j];
            const double d = std::hypot(a.pose.x - b.pose.x, a.pose.y - b.pose.y);
            if (d + 1e-9 < a.object.radius + b.object.radius) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("make_vocabulary is deterministic and bounded") {
    const auto a = make_vocabulary(7, 2, {"apple", "cup"});
    const auto b = make_vocabulary(7, 2, {"apple", "cup"});
    CHECK(a == b);
    for (const ObjectSpec& o : a) {
        for (double v : o.attributes) CHECK(std::abs(v) <= 1.0);
        CHECK(o.radius > 0.0);
        CHECK(o.radius <= 0.1);
    }
    const auto c = make_vocabulary(8, 2, {"apple", "cup"});
    CHECK(a != c);
    // Attributes are a function of (seed, name), not of list order.
    const auto d = make_vocabulary(7, 2, {"cup", "apple"});
    CHECK(d[1].attributes == a[0].attributes);
    CHECK(d[1].name_id == 1);

    CHECK_THROWS_AS(make_vocabulary(7, 2, {"apple", "apple"}), UsageError);
    CHECK_THROWS_AS(make_vocabulary(7, 3, {"apple", "cup"}), UsageError);
    CHECK_THROWS_AS(make_vocabulary(7, 1, {"Apple"}), UsageError);
}

TEST_CASE("sample_scene layout rules") {
    const auto vocab = make_vocabulary(3, 9, names(9));
    Rng rng(17);
    SUBCASE("move_two_sides splits three per side with the target on its side") {
        for (int trial = 0; trial < 50; ++trial) {
            Layout layout;
            layout.kind = LayoutKind::move_two_sides;
            layout.target_name_id = 4;
            layout.target_side = trial % 2 == 0 ? Side::left : Side::right;
            std::vector<ObjectSpec> six(vocab.begin(), vocab.begin() + 6);
            const Scene s = sample_scene(six, layout, rng);
            int left = 0, right = 0;
            for (const Placement& p : s.placements) {
                (p.pose.x < 0.5 ? left : right) += 1;
            }
            CHECK(left >= 3);
            CHECK(right >= 3);
            const Pose& t = s.placements[static_cast<std::size_t>(s.index_of(4))].pose;
            CHECK((trial % 2 == 0 ? t.x < 0.5 : t.x >= 0.5));
            CHECK(scene_invariants_hold(s));
        }
    }
    SUBCASE("skill_three_slots pins objects near the three slots") {
        for (int trial = 0; trial < 50; ++trial) {
            Layout layout;
            layout.kind = LayoutKind::skill_three_slots;
            layout.target_name_id = 1;
            layout.target_slot = trial % 3;
            std::vector<ObjectSpec> three(vocab.begin(), vocab.begin() + 3);
            const Scene s = sample_scene(three, layout, rng);
            REQUIRE(s.placements.size() == 3);
            const double slots[3] = {0.25, 0.5, 0.75};
            int matched = 0;
            for (const Placement& p : s.placements) {
                for (double slot : slots) {
                    if (std::abs(p.pose.x - slot) <= 0.05) ++matched;
                }
            }
            CHECK(matched == 3);
            const Pose& t = s.placements[static_cast<std::size_t>(s.index_of(1))].pose;
            CHECK(std::abs(t.x - slots[trial % 3]) <= 0.05);
            CHECK(scene_invariants_hold(s));
        }
    }
    SUBCASE("binpick_panel keeps objects clear of the bin") {
        Layout layout;
        layout.kind = LayoutKind::binpick_panel;
        layout.target_name_id = 0;
        std::vector<ObjectSpec> three(vocab.begin(), vocab.begin() + 3);
        const Scene s = sample_scene(three, layout, rng);
        REQUIRE(s.bin_region.has_value());
        for (const Placement& p : s.placements) {
            CHECK(!s.bin_region->contains(p.pose.x, p.pose.y));
        }
        CHECK(scene_invariants_hold(s));
    }
    SUBCASE("unsatisfiable layouts raise placement errors") {
        std::vector<ObjectSpec> six(vocab.begin(), vocab.begin() + 6);
        Layout layout;
        layout.kind = LayoutKind::move_two_sides;
        layout.target_name_id = 0;
        // Absurd radii cannot be packed three per side.
        for (ObjectSpec& o : six) o.radius = 0.1;
        std::vector<ObjectSpec> many = six;
        for (int i = 6; i < 9; ++i) {
            ObjectSpec o = vocab[static_cast<std::size_t>(i)];
            o.radius = 0.1;
            many.push_back(o);
        }
        for (int i = 0; i < 3; ++i) {
            ObjectSpec o = many.back();
            o.name_id = 100 + i;
            o.name += "x" + std::to_string(i);
            many.push_back(o);
        }
        CHECK_THROWS_AS(sample_scene(many, layout, rng, 50), PlacementError);
    }
}

TEST_CASE("render rasterizes the disc contract") {
    SUBCASE("empty scene, identity view: all zeros") {
        const FeatureImage img = render(Scene{}, View{}, 16);
        for (double v : img.values) CHECK(v == 0.0);
    }
    SUBCASE("unit example: disc at center") {
        const Scene s = one_object_scene(0.5, 0.5, 0.1);
        const FeatureImage img = render(s, View{}, 16);
        const int attr_dim = 3;
        // Cell (8,8) center is (0.53125, 0.53125), inside the disc.
        const double* cell = img.cell(8, 8);
        for (int c = 0; c < attr_dim; ++c) {
            CHECK(cell[c] == s.placements[0].object.attributes[static_cast<std::size_t>(c)]);
        }
        CHECK(cell[attr_dim] == 1.0);
        // A far-away cell stays empty.
        const double* far = img.cell(0, 0);
        for (int c = 0; c <= attr_dim; ++c) CHECK(far[c] == 0.0);
        CHECK(render(s, View{}, 16) == img);  // purity
    }
    SUBCASE("background offset fills only empty cells") {
        const Scene s = one_object_scene(0.5, 0.5, 0.1);
        View v;
        v.background = -0.15;
        const FeatureImage img = render(s, v, 16);
        CHECK(img.cell(0, 0)[3] == -0.15);
        CHECK(img.cell(8, 8)[3] == 1.0);
    }
    SUBCASE("changing one object's attributes only touches its disc") {
        Rng rng(5);
        auto vocab = make_vocabulary(9, 6, names(6));
        Layout layout;
        layout.kind = LayoutKind::move_two_sides;
        layout.target_name_id = 0;
        Scene s = sample_scene(vocab, layout, rng);
        const FeatureImage before = render(s, View{}, 16);
        Placement& p = s.placements[2];
        for (double& a : p.object.attributes) a = -a * 0.5 + 0.1;
        const FeatureImage after = render(s, View{}, 16);
        for (int iy = 0; iy < 16; ++iy) {
            for (int ix = 0; ix < 16; ++ix) {
                bool differs = false;
                for (int c = 0; c < after.channels; ++c) {
                    differs = differs || before.cell(iy, ix)[c] != after.cell(iy, ix)[c];
                }
                if (!differs) continue;
                const double cx = (ix + 0.5) / 16, cy = (iy + 0.5) / 16;
                CHECK(std::hypot(cx - p.pose.x, cy - p.pose.y) <= p.object.radius);
            }
        }
    }
}

TEST_CASE("ground_truth_bbox hull arithmetic") {
    const Scene center = one_object_scene(0.5, 0.5, 0.1);
    auto b = ground_truth_bbox(center, 0, View{});
    CHECK(b[0] == doctest::Approx(0.4));
    CHECK(b[1] == doctest::Approx(0.4));
    CHECK(b[2] == doctest::Approx(0.6));
    CHECK(b[3] == doctest::Approx(0.6));

    const Scene edge = one_object_scene(0.05, 0.5, 0.1);
    // The layout allows centers down to the radius; the hull clips at 0.
    auto e = ground_truth_bbox(edge, 0, View{});
    CHECK(e[0] == 0.0);
    CHECK(e[2] == doctest::Approx(0.15));

    View zoom;
    zoom.zoom = 1.1;
    auto z = ground_truth_bbox(center, 0, zoom);
    CHECK(z[0] == doctest::Approx(0.39));
    CHECK(z[1] == doctest::Approx(0.39));
    CHECK(z[2] == doctest::Approx(0.61));
    CHECK(z[3] == doctest::Approx(0.61));

    CHECK_THROWS_AS(ground_truth_bbox(center, 99, View{}), UsageError);
}

TEST_CASE("step_dynamics") {
    SUBCASE("zero action leaves the state unchanged") {
        const Scene s = one_object_scene(0.5, 0.5, 0.06);
        GripperState g;
        const auto [s2, g2] = step_dynamics(s, g, Action());
        CHECK(s2 == s);
        CHECK(g2 == g);
    }
    SUBCASE("close at center grasps; rigid follow moves the object") {
        const Scene s = one_object_scene(0.5, 0.5, 0.06);
        GripperState g;
        g.x = 0.5;
        g.y = 0.5;
        auto [s2, g2] = step_dynamics(s, g, Action(0, 0, 0, -1.0));
        REQUIRE(g2.held == 0);
        CHECK(g2.closed);
        auto [s3, g3] = step_dynamics(s2, g2, Action(1.0, 0.0, 0.0, -1.0));
        CHECK(s3.placements[0].pose.x ==
              doctest::Approx(s2.placements[0].pose.x + kActionScale));
        CHECK(s3.placements[0].pose.y == doctest::Approx(s2.placements[0].pose.y));
        // Open releases.
        auto [s4, g4] = step_dynamics(s3, g3, Action(0, 0, 0, 1.0));
        CHECK(g4.held == -1);
        CHECK(!g4.closed);
    }
    SUBCASE("open gripper passes over objects; closed fist pushes pushables") {
        Scene s = one_object_scene(0.5, 0.5, 0.06);
        GripperState g;
        g.x = 0.5;
        g.y = 0.42;  // just below contact (0.02 + 0.06)
        auto [s_open, g_open] = step_dynamics(s, g, Action(0, 1.0, 0, 1.0));
        CHECK(s_open.placements[0].pose == s.placements[0].pose);  // no interaction
        GripperState fist = g;
        fist.closed = true;
        auto [s_push, g_push] = step_dynamics(s, fist, Action(0, 1.0, 0, 0.0));
        CHECK(s_push.placements[0].pose.y > 0.5);  // displaced upward
        const double d = std::hypot(g_push.x - s_push.placements[0].pose.x,
                                    g_push.y - s_push.placements[0].pose.y);
        CHECK(d >= kGripperRadius + 0.06 - 1e-9);
    }
    SUBCASE("non-graspable objects are never grasped") {
        const Scene s = one_object_scene(0.5, 0.5, 0.06, /*graspable=*/false);
        GripperState g;
        g.x = 0.5;
        g.y = 0.5;
        auto [s2, g2] = step_dynamics(s, g, Action(0, 0, 0, -1.0));
        CHECK(g2.held == -1);
        CHECK(g2.closed);
    }
    SUBCASE("invariants survive 100 random actions") {
        Rng rng(29);
        const auto vocab = make_vocabulary(31, 6, names(6));
        for (int trial = 0; trial < 20; ++trial) {
            Layout layout;
            layout.kind = LayoutKind::move_two_sides;
            layout.target_name_id = rng.uniform_int(6);
            Scene s = sample_scene(vocab, layout, rng);
            GripperState g = home_gripper(rng);
            for (int t = 0; t < 100; ++t) {
                const Action a(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                               rng.uniform(-1, 1));
                auto [ns, ng] = step_dynamics(s, g, a);
                s = std::move(ns);
                g = ng;
                REQUIRE(scene_invariants_hold(s));
                if (g.held >= 0) {
                    REQUIRE(g.closed);
                    const Pose& held = s.placements[static_cast<std::size_t>(g.held)].pose;
                    REQUIRE(std::hypot(held.x - g.x, held.y - g.y) <= kGraspRadius);
                }
                REQUIRE(g.theta >= -3.1415926536);
                REQUIRE(g.theta < 3.1415926536);
            }
        }
    }
}

TEST_CASE("expert controllers") {
    SUBCASE("terminal dwell: near the goal the move action is small") {
        const Scene s = one_object_scene(0.5, 0.5, 0.06);
        GripperState g;
        g.x = 0.497;
        g.y = 0.5004;
        const Action a = Expert(Skill::move, s, 0).act(s, g);
        CHECK(std::abs(a.dx) <= 0.1);
        CHECK(std::abs(a.dy) <= 0.1);
    }
    SUBCASE("rotate on a non-graspable target is a configuration error") {
        const Scene s = one_object_scene(0.5, 0.5, 0.06, /*graspable=*/false);
        CHECK_THROWS_AS(Expert(Skill::rotate, s, 0), UsageError);
    }
    SUBCASE("push on a non-pushable target is a configuration error") {
        const Scene s = one_object_scene(0.5, 0.5, 0.06, true, /*pushable=*/false);
        CHECK_THROWS_AS(Expert(Skill::push, s, 0), UsageError);
    }
    SUBCASE("pick_place without a bin region is a configuration error") {
        const Scene s = one_object_scene(0.5, 0.5, 0.06);
        CHECK_THROWS_AS(Expert(Skill::pick_place, s, 0), UsageError);
    }
    SUBCASE("expert rollouts reach every skill's success predicate") {
        const auto vocab = make_vocabulary(7, 8, names(8));
        Rng rng(41);
        for (Skill skill : {Skill::move, Skill::push, Skill::rotate, Skill::pick_place}) {
            int successes = 0;
            const int trials = 50;
            for (int trial = 0; trial < trials; ++trial) {
                std::vector<ObjectSpec> objs;
                for (const ObjectSpec& o : vocab) {
                    const bool ok = skill == Skill::move ||
                                    (skill == Skill::push ? o.pushable : o.graspable);
                    if (ok) objs.push_back(o);
                }
                REQUIRE(objs.size() >= 6);
                Layout layout;
                layout.kind = skill == Skill::move        ? LayoutKind::move_two_sides
                              : skill == Skill::pick_place ? LayoutKind::binpick_panel
                                                           : LayoutKind::skill_three_slots;
                if (layout.kind == LayoutKind::skill_three_slots) objs.resize(3);
                if (layout.kind == LayoutKind::binpick_panel) objs.resize(2);
                layout.target_name_id = objs[0].name_id;
                Scene initial = sample_scene(objs, layout, rng);
                GripperState g = home_gripper(rng);
                Expert expert(skill, initial, layout.target_name_id);
                Scene s = initial;
                for (int t = 0; t < kHorizon; ++t) {
                    if (skill_success(skill, initial, s, g, layout.target_name_id)) break;
                    auto [ns, ng] = step_dynamics(s, g, expert.act(s, g));
                    s = std::move(ns);
                    g = ng;
                }
                successes +=
                    skill_success(skill, initial, s, g, layout.target_name_id) ? 1 : 0;
            }
            CHECK(successes == trials);
        }
    }
}

TEST_CASE("move success demands hover plus strict nearest") {
    Scene s;
    s.placements.push_back({disc(0, 0, 0, 0.06), Pose{0.30, 0.5, 0}});
    s.placements.push_back({disc(1, 0, 0, 0.06), Pose{0.42, 0.5, 0}});
    GripperState g;
    g.y = 0.5;
    g.x = 0.37;  // within 0.05 of object 1 but nearer to... check both
    // distance to 0: 0.07, to 1: 0.05 -> hover ok on 1, nearest is 1
    CHECK(skill_success(Skill::move, s, s, g, 1));
    // target 0: hover fails (0.07 > 0.05)
    CHECK(!skill_success(Skill::move, s, s, g, 0));
    // equidistant: strictness rejects
    g.x = 0.36;
    CHECK(!skill_success(Skill::move, s, s, g, 1));
    CHECK(!skill_success(Skill::move, s, s, g, 0));
}
