#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "objbridge/datagen.h"
#include "objbridge/rng.h"

namespace objbridge {

struct HybridCorpus {
    std::vector<GroundingSample> vl;
    std::vector<Episode> robot;

    // Robot sampling addresses steps, not episodes.
    int total_robot_steps() const;
    // flat step index -> (episode, step)
    std::pair<int, int> locate_step(int flat) const;
    const RobotStep& step(int flat) const;

    bool operator==(const HybridCorpus&) const = default;
};

// Line-delimited text format, header "OBJBRIDGE-DATA v1". One record per
// line; reals serialize losslessly, reasoning strings byte-exact.
void save_dataset(const HybridCorpus& corpus, const std::string& path);
HybridCorpus load_dataset(const std::string& path);

struct MixSchedule {
    int ratio_robot = 10;
    int ratio_vl = 1;  // 0 switches the stream to robot-only
    std::uint64_t seed = 0;
};

enum class SourceTag { robot, vl };

// Deterministic interleave: every aligned (ratio_robot + ratio_vl)-element
// window holds exactly the scheduled counts; within each source the indices
// run through a seeded permutation, reshuffled each pass.
class MixStream {
public:
    MixStream(int n_robot, int n_vl, const MixSchedule& schedule);
    std::pair<SourceTag, int> next();

private:
    void refill_window();
    int draw(std::vector<int>& perm, std::size_t& pos, int n);

    MixSchedule sched_;
    Rng rng_;
    int n_robot_, n_vl_;
    std::vector<int> robot_perm_, vl_perm_;
    std::size_t robot_pos_ = 0, vl_pos_ = 0;
    std::vector<SourceTag> window_;
    std::size_t window_pos_ = 0;
};

struct HybridBatch {
    // Stream order preserved; indices address corpus.vl / flat robot steps.
    std::vector<std::pair<SourceTag, int>> elements;

    std::vector<int> robot_steps() const;
    std::vector<int> vl_samples() const;
};

HybridBatch next_batch(MixStream& stream, int batch_size, const HybridCorpus& corpus);

}  // namespace objbridge
