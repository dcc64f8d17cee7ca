// Serial-vs-OpenMP comparison for the three hot kernels: batch gradient
// accumulation, protocol evaluation trials, and episode generation. Both
// paths produce identical bytes (per-item rng streams, fixed-order
// reduction); this tool only compares wall time.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "objbridge/dataset.h"
#include "objbridge/evaluation.h"
#include "objbridge/training.h"

using namespace objbridge;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::string> bench_names() {
    return {"apple", "banana", "cup", "mug", "bottle", "can", "plate", "bowl",
            "spoon", "fork", "knife", "sponge"};
}

struct Fixture {
    std::vector<ObjectSpec> vocab;
    HybridCorpus corpus;
    ModelConfig model;
    TrainConfig tcfg;
};

Fixture make_fixture() {
    Fixture f;
    const auto names = bench_names();
    f.vocab = make_vocabulary(7, static_cast<int>(names.size()), names);
    EpisodeGenConfig ecfg;
    ecfg.skill = Skill::move;
    ecfg.demos_per_object = 4;
    ecfg.seed = 11;
    f.corpus.robot = gen_robot_episodes(f.vocab, ecfg);
    f.corpus.vl = gen_grounding_set(f.vocab, 6, ViewDist::robot_camera(), 16, 13);
    f.model.vocab_slots = static_cast<int>(names.size()) + 8;
    f.tcfg.steps = 20;
    f.tcfg.seed = 3;
    return f;
}

double bench_batches(const Fixture& f, Parallelism par) {
    PolicyParams params = PolicyParams::init(f.model, 1);
    MixStream stream(f.corpus.total_robot_steps(), static_cast<int>(f.corpus.vl.size()),
                     MixSchedule{10, 1, f.tcfg.seed});
    std::vector<GradBuffer> workspace;
    const auto t0 = Clock::now();
    for (int step = 1; step <= f.tcfg.steps; ++step) {
        const HybridBatch batch = next_batch(stream, f.tcfg.batch_size, f.corpus);
        accumulate_batch(params, f.corpus, batch, f.tcfg, step, workspace, par);
        for (Parameter* p : params.all()) p->zero_grad();
    }
    return seconds_since(t0);
}

double bench_eval(const Fixture& f, Parallelism par) {
    const Actor expert = make_expert_actor();
    std::vector<int> ids;
    for (const ObjectSpec& o : f.vocab) ids.push_back(o.name_id);
    const auto t0 = Clock::now();
    eval_move_protocol(expert, f.vocab, ids, {}, 4, 5, 16, par);
    return seconds_since(t0);
}

double bench_datagen(const Fixture& f, Parallelism par) {
    EpisodeGenConfig ecfg;
    ecfg.skill = Skill::move;
    ecfg.demos_per_object = 8;
    ecfg.seed = 21;
    const auto t0 = Clock::now();
    gen_robot_episodes(f.vocab, ecfg, par);
    return seconds_since(t0);
}

}  // namespace

int main() {
    const Fixture f = make_fixture();
    std::printf("threads available: %d\n\n", max_threads());
    std::printf("%-24s %10s %10s %8s\n", "kernel", "serial[s]", "openmp[s]", "speedup");
    struct Row {
        const char* name;
        double (*fn)(const Fixture&, Parallelism);
    };
    const Row rows[] = {
        {"batch_gradients", bench_batches},
        {"eval_move_protocol", bench_eval},
        {"episode_generation", bench_datagen},
    };
    for (const Row& row : rows) {
        const double s = row.fn(f, Parallelism::serial);
        const double p = row.fn(f, Parallelism::openmp);
        std::printf("%-24s %10.3f %10.3f %7.2fx\n", row.name, s, p, s / p);
    }
    return 0;
}
