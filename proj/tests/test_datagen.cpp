#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "objbridge/datagen.h"
#include "objbridge/errors.h"
#include "objbridge/success.h"

using namespace objbridge;

namespace {

std::vector<std::string> names(int n, const std::string& prefix = "obj") {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

Scene two_object_scene() {
    const auto vocab = make_vocabulary(3, 2, {"left", "right"});
    Scene s;
    s.placements.push_back({vocab[0], Pose{0.3, 0.5, 0}});
    s.placements.push_back({vocab[1], Pose{0.7, 0.5, 0}});
    return s;
}

}  // namespace

TEST_CASE("gen_grounding_set counts, codec integrity, determinism") {
    const auto vocab = make_vocabulary(7, 10, names(10));
    const auto set =
        gen_grounding_set(vocab, 20, ViewDist::robot_camera(), 16, /*seed=*/5);
    CHECK(set.size() == 200);  // objects x images_per_object
    for (const GroundingSample& s : set) {
        const auto [name, box] = parse_reasoning(s.reasoning);
        CHECK(box == s.bbox);
        CHECK(name == vocab[static_cast<std::size_t>(s.name_id)].name);
        CHECK(s.question == question_for(name));
        CHECK(s.image.g == 16);
    }
    const auto again =
        gen_grounding_set(vocab, 20, ViewDist::robot_camera(), 16, /*seed=*/5);
    CHECK(again == set);
    // Parallel generation is bit-identical to serial.
    const auto par = gen_grounding_set(vocab, 20, ViewDist::robot_camera(), 16, 5,
                                       Parallelism::openmp);
    CHECK(par == set);
}

TEST_CASE("noisy_detector branches") {
    const Scene s = two_object_scene();
    SUBCASE("noiseless: exactly the quantized oracle hull") {
        Rng rng(1);
        const BBox b = noisy_detector(s, 0, View{}, DetectorNoise{0.0, 0.0}, rng);
        CHECK(b == quantize_box(ground_truth_bbox(s, 0, View{})));
    }
    SUBCASE("p_wrong=1 with two objects returns the other hull") {
        Rng rng(2);
        for (int i = 0; i < 50; ++i) {
            const BBox b = noisy_detector(s, 0, View{}, DetectorNoise{0.0, 0.999999}, rng);
            CHECK(b == quantize_box(ground_truth_bbox(s, 1, View{})));
        }
    }
    SUBCASE("wrong-object frequency tracks p_wrong over 10k draws") {
        Rng rng(3);
        const BBox truth = quantize_box(ground_truth_bbox(s, 0, View{}));
        int wrong = 0;
        for (int i = 0; i < 10000; ++i) {
            const BBox b = noisy_detector(s, 0, View{}, DetectorNoise{0.0, 0.1}, rng);
            wrong += (b == truth) ? 0 : 1;
        }
        CHECK(wrong / 10000.0 == doctest::Approx(0.1).epsilon(0.1));
        CHECK(std::abs(wrong / 10000.0 - 0.1) <= 0.01);
    }
    SUBCASE("jitter keeps boxes valid") {
        Rng rng(4);
        for (int i = 0; i < 500; ++i) {
            const BBox b = noisy_detector(s, 0, View{}, DetectorNoise{25.0, 0.0}, rng);
            CHECK(b.x1 >= 0);
            CHECK(b.x2 <= 999);
            CHECK(b.x1 <= b.x2);
            CHECK(b.y1 <= b.y2);
        }
    }
    SUBCASE("absent object is a grounding error") {
        Rng rng(5);
        CHECK_THROWS_AS(noisy_detector(s, 99, View{}, DetectorNoise{}, rng), UsageError);
    }
}

TEST_CASE("verify_and_correct") {
    const BBox truth{100, 100, 299, 299};
    CHECK(verify_and_correct(truth, truth) == truth);
    const BBox disjoint{700, 700, 900, 900};
    CHECK(verify_and_correct(disjoint, truth) == truth);
    // Inclusive-area iou((0,0,19,19),(0,0,29,19)) = 400/600 >= 0.5: kept.
    const BBox a{0, 0, 19, 19}, b{0, 0, 29, 19};
    CHECK(iou(a, b) == doctest::Approx(400.0 / 600.0));
    CHECK(verify_and_correct(a, b) == a);
    // iou exactly at the threshold is kept (>= is inclusive):
    // (0,0,9,19) vs (0,0,19,9): areas 200 each, intersection 100, union 300,
    // iou = 1/3 < 0.5 corrected; with iou_min = 1.0/3.0 kept.
    const BBox c{0, 0, 9, 19}, d{0, 0, 19, 9};
    CHECK(iou(c, d) == doctest::Approx(1.0 / 3.0));
    CHECK(verify_and_correct(c, d, 1.0 / 3.0) == c);
    CHECK(verify_and_correct(c, d, 0.5) == d);
}

TEST_CASE("gen_robot_episodes: counts, success, reasoning wiring") {
    const auto vocab = make_vocabulary(7, 6, names(6));
    EpisodeGenConfig cfg;
    cfg.skill = Skill::move;
    cfg.demos_per_object = 5;
    cfg.seed = 11;
    const auto episodes = gen_robot_episodes(vocab, cfg);
    CHECK(episodes.size() == 30);
    for (const Episode& e : episodes) {
        CHECK(e.success);
        CHECK(e.steps.size() >= 1);
        CHECK(e.steps.size() <= static_cast<std::size_t>(kHorizon));
        for (const RobotStep& st : e.steps) {
            const auto [name, box] = parse_reasoning(st.reasoning);
            CHECK(name == vocab[static_cast<std::size_t>(e.target_name_id)].name);
            CHECK(st.instruction.name_id == e.target_name_id);
            CHECK(st.instruction.skill_id == static_cast<int>(Skill::move));
            CHECK(std::abs(st.action.dx) <= 1.0);
            CHECK(std::abs(st.action.grip) <= 1.0);
            // One annotation per episode: every step carries the same box.
            CHECK(st.reasoning == e.steps.front().reasoning);
        }
    }
    const auto again = gen_robot_episodes(vocab, cfg);
    CHECK(again == episodes);
    const auto par = gen_robot_episodes(vocab, cfg, Parallelism::openmp);
    CHECK(par == episodes);
}

TEST_CASE("noiseless annotation pipeline reproduces the oracle hull") {
    const auto vocab = make_vocabulary(7, 6, names(6));
    EpisodeGenConfig cfg;
    cfg.skill = Skill::move;
    cfg.demos_per_object = 2;
    cfg.noise = DetectorNoise{0.0, 0.0};
    cfg.seed = 13;
    for (const Episode& e : gen_robot_episodes(vocab, cfg)) {
        const auto [name, box] = parse_reasoning(e.steps.front().reasoning);
        // The annotated view is the step-0 identity view; rebuild the truth
        // from the recorded image is impossible, but noiseless detection +
        // verification must produce a box to which verification is a no-op.
        CHECK(verify_and_correct(box, box) == box);
    }
}

TEST_CASE("pipeline soundness: default noise never stores a bad box") {
    const auto vocab = make_vocabulary(7, 6, names(6));
    Rng rng(17);
    int corrected = 0;
    for (int i = 0; i < 2000; ++i) {
        Layout layout;
        layout.kind = LayoutKind::move_two_sides;
        layout.target_name_id = vocab[static_cast<std::size_t>(rng.uniform_int(6))].name_id;
        const Scene s = sample_scene(vocab, layout, rng);
        const BBox truth = quantize_box(ground_truth_bbox(s, layout.target_name_id, View{}));
        const BBox det =
            noisy_detector(s, layout.target_name_id, View{}, DetectorNoise{5.0, 0.05}, rng);
        const BBox kept = verify_and_correct(det, truth, 0.5);
        CHECK(iou(kept, truth) >= 0.5);
        corrected += (kept == det) ? 0 : 1;
    }
    // The verification step must actually fire under default noise.
    CHECK(corrected > 0);
}

TEST_CASE("rotate and push demos move the right object the right way") {
    const auto all = make_vocabulary(7, 10, names(10));
    std::vector<ObjectSpec> rotatable, pushable;
    for (const ObjectSpec& o : all) {
        if (o.graspable && rotatable.size() < 3) rotatable.push_back(o);
        if (o.pushable && pushable.size() < 3) pushable.push_back(o);
    }
    EpisodeGenConfig cfg;
    cfg.skill = Skill::rotate;
    cfg.demos_per_object = 2;
    cfg.seed = 19;
    for (const Episode& e : gen_robot_episodes(rotatable, cfg)) CHECK(e.success);
    cfg.skill = Skill::push;
    for (const Episode& e : gen_robot_episodes(pushable, cfg)) CHECK(e.success);
    cfg.skill = Skill::rotate;
    ObjectSpec bad = all[0];
    bad.graspable = false;
    CHECK_THROWS_AS(gen_robot_episodes({bad, rotatable[1], rotatable[2]}, cfg), UsageError);
}

TEST_CASE("smartphone set: reserved slots, shifted views, shared schema") {
    const auto vocab = make_vocabulary(7, 10, names(10));
    const auto fresh = make_reserved_objects(7, {"pikachu", "toycat"}, vocab, 10);
    CHECK(fresh[0].name_id == 10);
    CHECK(fresh[1].name_id == 11);
    CHECK_THROWS_AS(make_reserved_objects(7, {"obj3"}, vocab, 10), UsageError);

    const auto set =
        gen_smartphone_set(fresh, vocab, 21, ViewDist::smartphone(), 16, /*seed=*/23);
    CHECK(set.size() == 42);
    for (const GroundingSample& s : set) {
        CHECK(s.image.background != 0.0);  // continuous draw: nonzero w.p. 1
        CHECK((s.name_id == 10 || s.name_id == 11));
        const auto [name, box] = parse_reasoning(s.reasoning);
        CHECK(box == s.bbox);
    }
    // Same reader path as robot-camera grounding data (shared type).
    const auto robot_set = gen_grounding_set(vocab, 1, ViewDist::robot_camera(), 16, 29);
    CHECK(robot_set.front().image.channels == set.front().image.channels);

    ObjectSpec clash = fresh[0];
    clash.name_id = 3;
    CHECK_THROWS_AS(gen_smartphone_set({clash}, vocab, 21, ViewDist::smartphone(), 16, 31),
                    UsageError);
}
