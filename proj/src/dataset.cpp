#include "objbridge/dataset.h"

#include <fstream>

#include <json.hpp>

#include "objbridge/errors.h"

namespace objbridge {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "OBJBRIDGE-DATA v1";

json image_to_json(const FeatureImage& img) {
    return json{{"g", img.g}, {"c", img.channels}, {"bg", img.background}, {"v", img.values}};
}

FeatureImage image_from_json(const json& j) {
    FeatureImage img;
    img.g = j.at("g").get<int>();
    img.channels = j.at("c").get<int>();
    img.background = j.at("bg").get<double>();
    img.values = j.at("v").get<std::vector<double>>();
    if (static_cast<std::size_t>(img.g) * img.g * img.channels != img.values.size()) {
        throw DataError("image value count does not match its dimensions");
    }
    return img;
}

// Validates the embedded reasoning string through the strict codec.
std::string checked_reasoning(const json& j) {
    const std::string text = j.get<std::string>();
    parse_reasoning(text);
    return text;
}

}  // namespace

int HybridCorpus::total_robot_steps() const {
    int n = 0;
    for (const Episode& e : robot) n += static_cast<int>(e.steps.size());
    return n;
}

std::pair<int, int> HybridCorpus::locate_step(int flat) const {
    for (std::size_t e = 0; e < robot.size(); ++e) {
        const int len = static_cast<int>(robot[e].steps.size());
        if (flat < len) return {static_cast<int>(e), flat};
        flat -= len;
    }
    throw UsageError("robot step index out of range");
}

const RobotStep& HybridCorpus::step(int flat) const {
    const auto [e, s] = locate_step(flat);
    return robot[static_cast<std::size_t>(e)].steps[static_cast<std::size_t>(s)];
}

void save_dataset(const HybridCorpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("save_dataset: cannot open " + path);
    out << kMagic << "\n";
    for (const GroundingSample& s : corpus.vl) {
        json j{{"kind", "vl"},
               {"name_id", s.name_id},
               {"question", s.question},
               {"reasoning", s.reasoning},
               {"bbox", {s.bbox.x1, s.bbox.y1, s.bbox.x2, s.bbox.y2}},
               {"image", image_to_json(s.image)}};
        out << j.dump() << "\n";
    }
    for (const Episode& e : corpus.robot) {
        json steps = json::array();
        for (const RobotStep& st : e.steps) {
            steps.push_back(json{
                {"image", image_to_json(st.image)},
                {"proprio", st.proprio},
                {"skill_id", st.instruction.skill_id},
                {"name_id", st.instruction.name_id},
                {"reasoning", st.reasoning},
                {"action", {st.action.dx, st.action.dy, st.action.dtheta, st.action.grip}}});
        }
        json j{{"kind", "robot_episode"},
               {"skill_id", e.skill_id},
               {"target", e.target_name_id},
               {"success", e.success},
               {"steps", std::move(steps)}};
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("save_dataset: write failed for " + path);
}

HybridCorpus load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("load_dataset: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("load_dataset: empty file " + path);
    if (line != kMagic) {
        throw DataError("load_dataset: bad header \"" + line + "\", expected \"" +
                        std::string(kMagic) + "\"");
    }
    HybridCorpus corpus;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            const std::string kind = j.at("kind").get<std::string>();
            if (kind == "vl") {
                GroundingSample s;
                s.name_id = j.at("name_id").get<int>();
                s.question = j.at("question").get<std::string>();
                s.reasoning = checked_reasoning(j.at("reasoning"));
                const auto b = j.at("bbox").get<std::vector<int>>();
                if (b.size() != 4) throw DataError("bbox needs 4 bins");
                s.bbox = BBox{b[0], b[1], b[2], b[3]};
                s.image = image_from_json(j.at("image"));
                corpus.vl.push_back(std::move(s));
            } else if (kind == "robot_episode") {
                Episode e;
                e.skill_id = j.at("skill_id").get<int>();
                e.target_name_id = j.at("target").get<int>();
                e.success = j.at("success").get<bool>();
                for (const json& js : j.at("steps")) {
                    RobotStep st;
                    st.image = image_from_json(js.at("image"));
                    const auto pr = js.at("proprio").get<std::vector<double>>();
                    if (pr.size() != 5) throw DataError("proprio needs 5 reals");
                    std::copy(pr.begin(), pr.end(), st.proprio.begin());
                    st.instruction = Instruction{js.at("skill_id").get<int>(),
                                                 js.at("name_id").get<int>()};
                    st.reasoning = checked_reasoning(js.at("reasoning"));
                    const auto a = js.at("action").get<std::vector<double>>();
                    if (a.size() != 4) throw DataError("action needs 4 reals");
                    st.action = Action(a[0], a[1], a[2], a[3]);
                    e.steps.push_back(std::move(st));
                }
                corpus.robot.push_back(std::move(e));
            } else {
                throw DataError("unknown record kind \"" + kind + "\"");
            }
        } catch (const DataError& err) {
            throw DataError("line " + std::to_string(line_no) + ": " + err.what());
        } catch (const std::exception& err) {
            throw DataError("line " + std::to_string(line_no) + ": " + err.what());
        }
    }
    return corpus;
}

// ---- mixing -----------------------------------------------------------------

MixStream::MixStream(int n_robot, int n_vl, const MixSchedule& schedule)
    : sched_(schedule), rng_(mix64(schedule.seed, 0x6d6978)), n_robot_(n_robot), n_vl_(n_vl) {
    if (sched_.ratio_robot < 1) throw UsageError("mix schedule: ratio_robot must be >= 1");
    if (sched_.ratio_vl < 0) throw UsageError("mix schedule: ratio_vl must be >= 0");
    if (n_robot_ < 1) throw UsageError("mix stream: empty robot corpus");
    if (sched_.ratio_vl > 0 && n_vl_ < 1) throw UsageError("mix stream: empty vl corpus");
}

int MixStream::draw(std::vector<int>& perm, std::size_t& pos, int n) {
    if (pos >= perm.size()) {
        // New pass: fresh permutation so no index starves.
        perm.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (int i = n - 1; i > 0; --i) {
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(rng_.uniform_int(i + 1))]);
        }
        pos = 0;
    }
    return perm[pos++];
}

void MixStream::refill_window() {
    window_.clear();
    window_pos_ = 0;
    for (int i = 0; i < sched_.ratio_robot; ++i) window_.push_back(SourceTag::robot);
    for (int i = 0; i < sched_.ratio_vl; ++i) window_.push_back(SourceTag::vl);
    for (int i = static_cast<int>(window_.size()) - 1; i > 0; --i) {
        std::swap(window_[static_cast<std::size_t>(i)],
                  window_[static_cast<std::size_t>(rng_.uniform_int(i + 1))]);
    }
}

std::pair<SourceTag, int> MixStream::next() {
    if (window_pos_ >= window_.size()) refill_window();
    const SourceTag tag = window_[window_pos_++];
    if (tag == SourceTag::robot) return {tag, draw(robot_perm_, robot_pos_, n_robot_)};
    return {tag, draw(vl_perm_, vl_pos_, n_vl_)};
}

std::vector<int> HybridBatch::robot_steps() const {
    std::vector<int> out;
    for (const auto& [tag, idx] : elements) {
        if (tag == SourceTag::robot) out.push_back(idx);
    }
    return out;
}

std::vector<int> HybridBatch::vl_samples() const {
    std::vector<int> out;
    for (const auto& [tag, idx] : elements) {
        if (tag == SourceTag::vl) out.push_back(idx);
    }
    return out;
}

HybridBatch next_batch(MixStream& stream, int batch_size, const HybridCorpus& corpus) {
    if (batch_size < 1) throw UsageError("next_batch: batch_size must be >= 1");
    HybridBatch batch;
    batch.elements.reserve(static_cast<std::size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) {
        auto [tag, idx] = stream.next();
        if (tag == SourceTag::robot && corpus.total_robot_steps() <= idx) {
            throw UsageError("next_batch: robot corpus smaller than the stream assumes");
        }
        if (tag == SourceTag::vl && static_cast<int>(corpus.vl.size()) <= idx) {
            throw UsageError("next_batch: vl corpus smaller than the stream assumes");
        }
        batch.elements.emplace_back(tag, idx);
    }
    return batch;
}

}  // namespace objbridge
