#include "objbridge/cli.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "objbridge/dataset.h"
#include "objbridge/errors.h"
#include "objbridge/evaluation.h"
#include "objbridge/gradsuite.h"
#include "objbridge/training.h"

namespace objbridge {

namespace {

namespace fs = std::filesystem;

// Enough lowercase tokens for the default 12 ID + 40 OOD split plus slack.
const std::vector<std::string> kDefaultNames = {
    "apple",    "banana",   "cup",      "mug",      "bottle",   "can",
    "plate",    "bowl",     "spoon",    "fork",     "knife",    "sponge",
    "peach",    "pear",     "lemon",    "lime",     "orange",   "grape",
    "tomato",   "carrot",   "potato",   "onion",    "pepper",   "garlic",
    "brush",    "comb",     "soap",     "towel",    "candle",   "eraser",
    "pencil",   "pen",      "marker",   "stapler",  "tape",     "scissors",
    "block",    "dice",     "ball",     "ring",     "coin",     "button",
    "bolt",     "nut",      "screw",    "washer",   "gear",     "spring",
    "duck",     "frog",     "bear",     "bunny",    "robot",    "car",
    "train",    "plane",    "boat",     "drum",     "bell",     "flute",
    "muffin",   "donut",    "cookie",   "cracker",  "bread",    "bagel",
    "hammer",   "wrench",   "pliers",   "level",    "clamp",    "file",
};

struct RunConfig {
    // data generation
    std::uint64_t vocab_seed = 7;
    int id_objects = 12;
    int ood_objects = 40;
    int images_per_object = 20;
    int demos_per_object = 40;
    std::string skill = "move";
    double noise_sigma = 5.0;
    double noise_pwrong = 0.05;
    double verify_iou_min = 0.5;
    int probe_images = 4;

    // model
    int attr_dim = 8;
    int grid = 16;
    int hidden = 32;
    int reserved_slots = 8;
    std::string action_head = "regression";
    int diffusion_steps = 20;
    int t_emb_dim = 8;

    // training
    int steps = 3000;
    int batch_size = 32;
    double lr = 1e-3;
    int ratio_robot = 10;
    int ratio_vl = 1;
    double lambda_bbox = 1.0;
    double lambda_act = 1.0;
    std::string ablation = "full";
    std::uint64_t seed = 1;
    int log_every = 50;

    // evaluation
    std::string protocol = "move";
    int trials = 0;  // 0: protocol default (4 for move, 3 otherwise)
    std::uint64_t eval_seed = 99;
    double iou_min = 0.5;
    std::string subset = "all";  // id | ood | new | all
    double assert_min = -1.0;    // gates disabled unless set
    double assert_max = 2.0;

    // continual learning
    std::string new_objects = "pikachu,toycat";
    int new_images = 21;
    int epochs = 1;
    double lr_scale = 0.1;

    // paths & execution
    std::string out = "out";
    std::string data;
    std::string probe;
    std::string ckpt;
    std::string report_csv;
    int threads = 0;
    int parallel = 1;  // 0 forces the serial reference kernels
};

struct KeySpec {
    std::string name;
    enum Kind { kInt, kU64, kDouble, kString } kind;
    void* ptr;
};

std::vector<KeySpec> key_table(RunConfig& c) {
    return {
        {"vocab_seed", KeySpec::kU64, &c.vocab_seed},
        {"id_objects", KeySpec::kInt, &c.id_objects},
        {"ood_objects", KeySpec::kInt, &c.ood_objects},
        {"images_per_object", KeySpec::kInt, &c.images_per_object},
        {"demos_per_object", KeySpec::kInt, &c.demos_per_object},
        {"skill", KeySpec::kString, &c.skill},
        {"noise_sigma", KeySpec::kDouble, &c.noise_sigma},
        {"noise_pwrong", KeySpec::kDouble, &c.noise_pwrong},
        {"verify_iou_min", KeySpec::kDouble, &c.verify_iou_min},
        {"probe_images", KeySpec::kInt, &c.probe_images},
        {"attr_dim", KeySpec::kInt, &c.attr_dim},
        {"grid", KeySpec::kInt, &c.grid},
        {"hidden", KeySpec::kInt, &c.hidden},
        {"reserved_slots", KeySpec::kInt, &c.reserved_slots},
        {"action_head", KeySpec::kString, &c.action_head},
        {"diffusion_steps", KeySpec::kInt, &c.diffusion_steps},
        {"t_emb_dim", KeySpec::kInt, &c.t_emb_dim},
        {"steps", KeySpec::kInt, &c.steps},
        {"batch_size", KeySpec::kInt, &c.batch_size},
        {"lr", KeySpec::kDouble, &c.lr},
        {"ratio_robot", KeySpec::kInt, &c.ratio_robot},
        {"ratio_vl", KeySpec::kInt, &c.ratio_vl},
        {"lambda_bbox", KeySpec::kDouble, &c.lambda_bbox},
        {"lambda_act", KeySpec::kDouble, &c.lambda_act},
        {"ablation", KeySpec::kString, &c.ablation},
        {"seed", KeySpec::kU64, &c.seed},
        {"log_every", KeySpec::kInt, &c.log_every},
        {"protocol", KeySpec::kString, &c.protocol},
        {"trials", KeySpec::kInt, &c.trials},
        {"eval_seed", KeySpec::kU64, &c.eval_seed},
        {"iou_min", KeySpec::kDouble, &c.iou_min},
        {"subset", KeySpec::kString, &c.subset},
        {"assert_min", KeySpec::kDouble, &c.assert_min},
        {"assert_max", KeySpec::kDouble, &c.assert_max},
        {"new_objects", KeySpec::kString, &c.new_objects},
        {"new_images", KeySpec::kInt, &c.new_images},
        {"epochs", KeySpec::kInt, &c.epochs},
        {"lr_scale", KeySpec::kDouble, &c.lr_scale},
        {"out", KeySpec::kString, &c.out},
        {"data", KeySpec::kString, &c.data},
        {"probe", KeySpec::kString, &c.probe},
        {"ckpt", KeySpec::kString, &c.ckpt},
        {"report_csv", KeySpec::kString, &c.report_csv},
        {"threads", KeySpec::kInt, &c.threads},
        {"parallel", KeySpec::kInt, &c.parallel},
    };
}

void set_key(RunConfig& c, const std::string& key, const std::string& value) {
    for (const KeySpec& k : key_table(c)) {
        if (k.name != key) continue;
        try {
            switch (k.kind) {
                case KeySpec::kInt: *static_cast<int*>(k.ptr) = std::stoi(value); break;
                case KeySpec::kU64:
                    *static_cast<std::uint64_t*>(k.ptr) = std::stoull(value);
                    break;
                case KeySpec::kDouble: *static_cast<double*>(k.ptr) = std::stod(value); break;
                case KeySpec::kString: *static_cast<std::string*>(k.ptr) = value; break;
            }
        } catch (const std::exception&) {
            throw UsageError("bad value for config key " + key + ": " + value);
        }
        return;
    }
    throw UsageError("unknown config key: " + key);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

void load_config_file(RunConfig& c, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError(path + ":" + std::to_string(line_no) + ": expected key = value");
        }
        set_key(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void write_resolved(const RunConfig& c, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream out(dir + "/config.resolved", std::ios::binary);
    if (!out) throw UsageError("cannot write config.resolved under " + dir);
    RunConfig& mut = const_cast<RunConfig&>(c);
    char buf[64];
    for (const KeySpec& k : key_table(mut)) {
        out << k.name << " = ";
        switch (k.kind) {
            case KeySpec::kInt: out << *static_cast<int*>(k.ptr); break;
            case KeySpec::kU64: out << *static_cast<std::uint64_t*>(k.ptr); break;
            case KeySpec::kDouble:
                std::snprintf(buf, sizeof buf, "%.17g", *static_cast<double*>(k.ptr));
                out << buf;
                break;
            case KeySpec::kString: out << *static_cast<std::string*>(k.ptr); break;
        }
        out << "\n";
    }
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// ---- vocabulary wiring -----------------------------------------------------

struct VocabSplit {
    std::vector<ObjectSpec> all;  // dense ids [0, id+ood)
    std::vector<int> id_ids, ood_ids;
};

bool suitable_for(const ObjectSpec& o, Skill skill) {
    switch (skill) {
        case Skill::move: return true;
        case Skill::push: return o.pushable;
        case Skill::rotate:
        case Skill::pick_place: return o.graspable;
    }
    return false;
}

// Deterministic split: walk the master name list, claim the first
// skill-suitable names for ID, the next for OOD.
VocabSplit build_vocab(const RunConfig& cfg) {
    const Skill skill = skill_from_name(cfg.skill);
    std::vector<ObjectSpec> master = make_vocabulary(
        cfg.vocab_seed, static_cast<int>(kDefaultNames.size()), kDefaultNames, cfg.attr_dim);
    std::vector<std::string> chosen;
    for (const ObjectSpec& o : master) {
        if (static_cast<int>(chosen.size()) >= cfg.id_objects + cfg.ood_objects) break;
        if (suitable_for(o, skill)) chosen.push_back(o.name);
    }
    if (static_cast<int>(chosen.size()) < cfg.id_objects + cfg.ood_objects) {
        throw UsageError("not enough suitable objects in the built-in name list (need " +
                         std::to_string(cfg.id_objects + cfg.ood_objects) + ")");
    }
    VocabSplit split;
    split.all = make_vocabulary(cfg.vocab_seed, static_cast<int>(chosen.size()), chosen,
                                cfg.attr_dim);
    for (int i = 0; i < cfg.id_objects; ++i) split.id_ids.push_back(i);
    for (int i = cfg.id_objects; i < cfg.id_objects + cfg.ood_objects; ++i) {
        split.ood_ids.push_back(i);
    }
    return split;
}

ModelConfig model_config(const RunConfig& cfg) {
    ModelConfig m;
    m.attr_dim = cfg.attr_dim;
    m.grid = cfg.grid;
    m.hidden = cfg.hidden;
    m.vocab_slots = cfg.id_objects + cfg.ood_objects + cfg.reserved_slots;
    m.reserved_slots = cfg.reserved_slots;
    if (cfg.action_head == "regression") {
        m.head = ModelConfig::Head::regression;
    } else if (cfg.action_head == "diffusion") {
        m.head = ModelConfig::Head::diffusion;
    } else {
        throw UsageError("action_head must be regression or diffusion");
    }
    m.diffusion_steps = cfg.diffusion_steps;
    m.t_emb_dim = cfg.t_emb_dim;
    return m;
}

TrainConfig train_config(const RunConfig& cfg) {
    TrainConfig t;
    t.steps = cfg.steps;
    t.batch_size = cfg.batch_size;
    t.lr = cfg.lr;
    t.ratio_robot = cfg.ratio_robot;
    t.ratio_vl = cfg.ratio_vl;
    t.lambda_bbox = cfg.lambda_bbox;
    t.lambda_act = cfg.lambda_act;
    t.ablation = ablation_from_name(cfg.ablation);
    t.seed = cfg.seed;
    t.log_every = cfg.log_every;
    return t;
}

Parallelism par_of(const RunConfig& cfg) {
    set_threads(cfg.threads);
    return cfg.parallel != 0 ? Parallelism::openmp : Parallelism::serial;
}

// ---- subcommands ---------------------------------------------------------------

HybridCorpus generate_corpus(const RunConfig& cfg, const VocabSplit& vocab,
                             Parallelism par) {
    HybridCorpus corpus;
    EpisodeGenConfig ecfg;
    ecfg.skill = skill_from_name(cfg.skill);
    ecfg.demos_per_object = cfg.demos_per_object;
    ecfg.noise = DetectorNoise{cfg.noise_sigma, cfg.noise_pwrong};
    ecfg.verify_iou_min = cfg.verify_iou_min;
    ecfg.grid = cfg.grid;
    ecfg.seed = mix64(cfg.vocab_seed, 0xe011);
    std::vector<ObjectSpec> id_specs;
    for (int i : vocab.id_ids) id_specs.push_back(vocab.all[static_cast<std::size_t>(i)]);
    corpus.robot = gen_robot_episodes(id_specs, ecfg, par);

    std::vector<ObjectSpec> ood_specs;
    for (int i : vocab.ood_ids) ood_specs.push_back(vocab.all[static_cast<std::size_t>(i)]);
    corpus.vl = gen_grounding_set(ood_specs, cfg.images_per_object, ViewDist::robot_camera(),
                                  cfg.grid, mix64(cfg.vocab_seed, 0x91), par);
    return corpus;
}

std::vector<GroundingSample> generate_probe(const RunConfig& cfg, const VocabSplit& vocab,
                                            Parallelism par) {
    std::vector<ObjectSpec> ood_specs;
    for (int i : vocab.ood_ids) ood_specs.push_back(vocab.all[static_cast<std::size_t>(i)]);
    // Distinct seed: held-out views of the same objects.
    return gen_grounding_set(ood_specs, cfg.probe_images, ViewDist::robot_camera(), cfg.grid,
                             mix64(cfg.vocab_seed, 0x9e0be), par);
}

int cmd_gen_data(const RunConfig& cfg) {
    const Parallelism par = par_of(cfg);
    const VocabSplit vocab = build_vocab(cfg);
    const HybridCorpus corpus = generate_corpus(cfg, vocab, par);
    fs::create_directories(cfg.out);
    save_dataset(corpus, cfg.out + "/dataset.jsonl");
    HybridCorpus probe_corpus;
    probe_corpus.vl = generate_probe(cfg, vocab, par);
    save_dataset(probe_corpus, cfg.out + "/probe.jsonl");
    write_resolved(cfg, cfg.out);
    std::cout << "episodes " << corpus.robot.size() << " (steps "
              << corpus.total_robot_steps() << "), vl " << corpus.vl.size() << ", probe "
              << probe_corpus.vl.size() << " -> " << cfg.out << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    const Parallelism par = par_of(cfg);
    if (cfg.data.empty()) throw UsageError("train needs --data <dataset.jsonl>");
    const HybridCorpus corpus = load_dataset(cfg.data);
    std::vector<GroundingSample> probe;
    if (!cfg.probe.empty()) probe = load_dataset(cfg.probe).vl;
    const TrainResult result = train(model_config(cfg), train_config(cfg), corpus, probe, par);
    fs::create_directories(cfg.out);
    save_checkpoint(result.checkpoint, cfg.out + "/ckpt.bin");
    save_metrics_csv(result.log, cfg.out + "/metrics.csv");
    write_resolved(cfg, cfg.out);
    const MetricsRow& last = result.log.back();
    std::cout << "trained " << cfg.steps << " steps: loss_vl " << last.loss_vl
              << ", loss_robot " << last.loss_robot << ", probe_iou " << last.probe_iou
              << " -> " << cfg.out << "\n";
    return 0;
}

Actor checkpoint_actor(const Checkpoint& ckpt) {
    return make_policy_actor(ckpt.params, ckpt.train.ablation);
}

int cmd_eval(const RunConfig& cfg) {
    const Parallelism par = par_of(cfg);
    if (cfg.ckpt.empty()) throw UsageError("eval needs --ckpt <ckpt.bin>");
    const Checkpoint ckpt = load_checkpoint(cfg.ckpt);
    require_head(ckpt, model_config(cfg).head);
    const VocabSplit vocab = build_vocab(cfg);

    std::vector<ObjectSpec> pool = vocab.all;
    std::vector<int> new_ids;
    if (cfg.subset == "new") {
        const int first_reserved = cfg.id_objects + cfg.ood_objects;
        const std::vector<ObjectSpec> fresh = make_reserved_objects(
            cfg.vocab_seed, split_csv(cfg.new_objects), vocab.all, first_reserved,
            cfg.attr_dim);
        for (const ObjectSpec& o : fresh) {
            new_ids.push_back(o.name_id);
            pool.push_back(o);
        }
    }
    std::vector<int> subset_ids;
    if (cfg.subset == "id") {
        subset_ids = vocab.id_ids;
    } else if (cfg.subset == "ood") {
        subset_ids = vocab.ood_ids;
    } else if (cfg.subset == "new") {
        subset_ids = new_ids;
    } else if (cfg.subset == "all") {
        subset_ids = vocab.id_ids;
        subset_ids.insert(subset_ids.end(), vocab.ood_ids.begin(), vocab.ood_ids.end());
    } else {
        throw UsageError("subset must be id, ood, new or all");
    }

    fs::create_directories(cfg.out);
    double headline = 0.0;
    if (cfg.protocol == "grounding") {
        // Held-out views of the subset objects.
        std::vector<ObjectSpec> subset_specs;
        for (int i : subset_ids) {
            for (const ObjectSpec& o : pool) {
                if (o.name_id == i) subset_specs.push_back(o);
            }
        }
        const auto samples =
            gen_grounding_set(subset_specs, cfg.probe_images, ViewDist::robot_camera(),
                              cfg.grid, mix64(cfg.eval_seed, 0x6f0), par);
        headline = grounding_accuracy(ckpt.params, samples, cfg.iou_min, par);
        std::cout << "grounding accuracy (iou>=" << cfg.iou_min << "): " << headline << "\n";
    } else {
        const Skill skill = skill_from_name(cfg.protocol == "move" ? "move" : cfg.protocol);
        const Actor actor = checkpoint_actor(ckpt);
        ProtocolReport report;
        const std::vector<int> empty;
        const std::vector<int>& id_part = cfg.subset == "ood" || cfg.subset == "new"
                                              ? empty
                                              : vocab.id_ids;
        std::vector<int> ood_only;
        if (cfg.subset != "id") {
            for (int i : subset_ids) {
                if (std::find(vocab.id_ids.begin(), vocab.id_ids.end(), i) ==
                    vocab.id_ids.end()) {
                    ood_only.push_back(i);
                }
            }
        }
        if (skill == Skill::move) {
            const int trials = cfg.trials > 0 ? cfg.trials : 4;
            report = eval_move_protocol(actor, pool, id_part, ood_only, trials,
                                        cfg.eval_seed, cfg.grid, par);
        } else {
            const int trials = cfg.trials > 0 ? cfg.trials : 3;
            report = eval_skill_protocol(actor, skill, pool, id_part, ood_only, trials,
                                         cfg.eval_seed, cfg.grid, par);
        }
        report.config_name = ablation_name(ckpt.train.ablation);
        report.checkpoint_hash = file_hash(cfg.ckpt);
        const std::vector<ProtocolReport> reports{report};
        emit_report(reports, cfg.out + "/report.csv", cfg.out + "/report.txt");
        int ok = 0, total = 0;
        if (skill == Skill::move) {
            std::vector<int> all_objs = id_part;
            all_objs.insert(all_objs.end(), ood_only.begin(), ood_only.end());
            ok = report.recognized(all_objs);
            total = static_cast<int>(all_objs.size());
        } else {
            std::vector<int> all_objs = id_part;
            all_objs.insert(all_objs.end(), ood_only.begin(), ood_only.end());
            std::tie(ok, total) = report.trial_successes(all_objs);
        }
        headline = total > 0 ? static_cast<double>(ok) / total : 0.0;
        std::cout << report.protocol << " [" << cfg.subset << "] " << ok << "/" << total
                  << " = " << headline << " -> " << cfg.out << "\n";
    }
    write_resolved(cfg, cfg.out);
    if (cfg.assert_min >= 0.0 && headline < cfg.assert_min) {
        throw AssertFailure("headline rate " + std::to_string(headline) +
                            " below assert_min " + std::to_string(cfg.assert_min));
    }
    if (headline > cfg.assert_max) {
        throw AssertFailure("headline rate " + std::to_string(headline) +
                            " above assert_max " + std::to_string(cfg.assert_max));
    }
    return 0;
}

int cmd_ablate(const RunConfig& cfg) {
    const Parallelism par = par_of(cfg);
    const VocabSplit vocab = build_vocab(cfg);
    HybridCorpus corpus;
    if (!cfg.data.empty()) {
        corpus = load_dataset(cfg.data);
    } else {
        corpus = generate_corpus(cfg, vocab, par);
    }
    std::vector<GroundingSample> probe =
        cfg.probe.empty() ? generate_probe(cfg, vocab, par) : load_dataset(cfg.probe).vl;

    fs::create_directories(cfg.out);
    std::vector<ProtocolReport> reports;
    for (const Ablation ab : {Ablation::full, Ablation::no_bbox, Ablation::robot_only}) {
        RunConfig rcfg = cfg;
        rcfg.ablation = ablation_name(ab);
        const TrainResult result =
            train(model_config(rcfg), train_config(rcfg), corpus, probe, par);
        const std::string dir = cfg.out + "/" + ablation_name(ab);
        fs::create_directories(dir);
        save_checkpoint(result.checkpoint, dir + "/ckpt.bin");
        save_metrics_csv(result.log, dir + "/metrics.csv");
        ProtocolReport report = eval_move_protocol(
            make_policy_actor(result.checkpoint.params, ab), vocab.all, vocab.id_ids,
            vocab.ood_ids, cfg.trials > 0 ? cfg.trials : 4, cfg.eval_seed, cfg.grid, par);
        report.config_name = ablation_name(ab);
        report.checkpoint_hash = file_hash(dir + "/ckpt.bin");
        std::cout << ablation_name(ab) << ": ID "
                  << report.recognized(report.id_objects) << "/" << report.id_objects.size()
                  << ", OOD " << report.recognized(report.ood_objects) << "/"
                  << report.ood_objects.size() << "\n";
        reports.push_back(std::move(report));
    }
    emit_report(reports, cfg.out + "/report.csv", cfg.out + "/report.txt");
    write_resolved(cfg, cfg.out);
    return 0;
}

int cmd_continual(const RunConfig& cfg) {
    const Parallelism par = par_of(cfg);
    if (cfg.ckpt.empty()) throw UsageError("continual needs --ckpt <ckpt.bin>");
    const Checkpoint ckpt = load_checkpoint(cfg.ckpt);
    const VocabSplit vocab = build_vocab(cfg);
    const std::vector<std::string> names = split_csv(cfg.new_objects);
    if (names.empty()) throw UsageError("continual needs --new_objects name1,name2");
    const int first_reserved = ckpt.model.vocab_slots - ckpt.model.reserved_slots;
    const std::vector<ObjectSpec> fresh = make_reserved_objects(
        cfg.vocab_seed, names, vocab.all, first_reserved, cfg.attr_dim);
    const auto new_vl =
        gen_smartphone_set(fresh, vocab.all, cfg.new_images, ViewDist::smartphone(),
                           cfg.grid, mix64(cfg.vocab_seed, 0x5a), par);
    const Checkpoint tuned =
        continual_finetune(ckpt, new_vl, cfg.epochs, cfg.lr_scale, cfg.seed, par);
    fs::create_directories(cfg.out);
    save_checkpoint(tuned, cfg.out + "/ckpt.bin");
    write_resolved(cfg, cfg.out);
    std::cout << "generated " << new_vl.size() << " samples for " << names.size()
              << " objects, " << cfg.epochs << " epoch(s), " << (tuned.step - ckpt.step)
              << " optimizer steps -> " << cfg.out << "/ckpt.bin\n";
    return 0;
}

int cmd_grad_check(const RunConfig&) {
    bool ok = true;
    for (const GradCheckResult& r : run_gradient_suite()) {
        std::printf("%-26s max rel err %.3e (tol %.0e) %s\n", r.name.c_str(),
                    r.max_rel_error, r.tolerance, r.passed() ? "ok" : "FAIL");
        ok = ok && r.passed();
    }
    if (!ok) throw AssertFailure("gradient suite failed");
    return 0;
}

int cmd_report(const RunConfig& cfg) {
    if (cfg.report_csv.empty()) throw UsageError("report needs --report_csv <report.csv>");
    std::ifstream in(cfg.report_csv);
    if (!in) throw UsageError("cannot open " + cfg.report_csv);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty report csv");
    std::vector<ProtocolReport> reports;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f = split_csv(line);
        if (f.size() != 9) {
            throw DataError("report csv line " + std::to_string(line_no) +
                            ": expected 9 fields");
        }
        ProtocolReport* rep = nullptr;
        for (ProtocolReport& r : reports) {
            if (r.protocol == f[0] && r.config_name == f[1]) rep = &r;
        }
        if (rep == nullptr) {
            reports.emplace_back();
            rep = &reports.back();
            rep->protocol = f[0];
            rep->config_name = f[1];
        }
        try {
            TrialResult t;
            t.name_id = std::stoi(f[2]);
            t.trial = std::stoi(f[3]);
            t.side_or_slot = f[4];
            t.success = std::stoi(f[5]) != 0;
            t.final_distance = std::stod(f[6]);
            t.nearest_is_target = std::stoi(f[7]) != 0;
            t.seed = std::stoull(f[8]);
            rep->rows.push_back(t);
            if (std::find(rep->ood_objects.begin(), rep->ood_objects.end(), t.name_id) ==
                rep->ood_objects.end()) {
                rep->ood_objects.push_back(t.name_id);
            }
        } catch (const std::exception& e) {
            throw DataError("report csv line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    fs::create_directories(cfg.out);
    emit_report(reports, cfg.out + "/report.csv", cfg.out + "/report.txt");
    std::cout << "re-rendered " << reports.size() << " report(s) -> " << cfg.out << "\n";
    return 0;
}

const char* kUsage =
    "usage: objbridge <command> [--config file] [--<key> <value>]...\n"
    "commands:\n"
    "  gen-data    build the vocabulary and write dataset.jsonl / probe.jsonl\n"
    "  train       co-train one configuration -> ckpt.bin + metrics.csv\n"
    "  ablate      train full / no_bbox / robot_only on shared data, compare\n"
    "  eval        run a protocol (move|rotate|push|binpick|grounding) on a ckpt\n"
    "  continual   1-epoch fine-tune on smartphone captures of new objects\n"
    "  grad-check  finite-difference check of every backward rule\n"
    "  report      re-render the comparison table from a report csv\n"
    "Any config key doubles as a flag, e.g. --steps 3000 --ablation no_bbox.\n";

}  // namespace

int run_command(const std::vector<std::string>& args) {
    try {
        if (args.empty() || args[0] == "--help" || args[0] == "-h") {
            std::cout << kUsage;
            return args.empty() ? 1 : 0;
        }
        const std::string cmd = args[0];
        RunConfig cfg;
        // --config first so explicit flags override the file.
        for (std::size_t i = 1; i + 1 < args.size(); i += 2) {
            if (args[i] == "--config") load_config_file(cfg, args[i + 1]);
        }
        for (std::size_t i = 1; i < args.size(); i += 2) {
            const std::string& flag = args[i];
            if (flag.rfind("--", 0) != 0) throw UsageError("expected a --flag, got " + flag);
            if (i + 1 >= args.size()) throw UsageError("missing value for " + flag);
            if (flag == "--config") continue;
            set_key(cfg, flag.substr(2), args[i + 1]);
        }
        if (cmd == "gen-data") return cmd_gen_data(cfg);
        if (cmd == "train") return cmd_train(cfg);
        if (cmd == "eval") return cmd_eval(cfg);
        if (cmd == "ablate") return cmd_ablate(cfg);
        if (cmd == "continual") return cmd_continual(cfg);
        if (cmd == "grad-check") return cmd_grad_check(cfg);
        if (cmd == "report") return cmd_report(cfg);
        throw UsageError("unknown command: " + cmd + "\n" + kUsage);
    } catch (const AssertFailure& e) {
        std::cerr << "assertion failed: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
}

}  // namespace objbridge
