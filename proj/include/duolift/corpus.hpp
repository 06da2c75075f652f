// Phantom corpus on disk: per-sample volume/masks/projections plus a JSON
// manifest recording paths, seeds, and train/validation split.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "duolift/phantom.hpp"
#include "duolift/volume.hpp"

namespace duolift {

namespace fs = std::filesystem;

struct SampleRecord {
    std::string dir;    // sample directory relative to the corpus root
    uint64_t seed = 0;
    std::string split;  // "train" or "val"
};

struct CorpusManifest {
    std::array<int, 3> dims{32, 32, 32};
    uint64_t seed = 0;
    std::vector<SampleRecord> samples;

    int count(const std::string& split = "") const {
        if (split.empty()) return static_cast<int>(samples.size());
        int n = 0;
        for (const auto& s : samples) n += (s.split == split);
        return n;
    }
};

/// One fully loaded sample (everything the trainer/evaluator needs).
struct Sample {
    Volume target;
    MaskVolume lung, vessel, body;
    Projection frontal, lateral;
    uint64_t seed = 0;
    std::string split;
};

inline std::string corpus_manifest_path(const std::string& corpus_dir) {
    return (fs::path(corpus_dir) / "manifest.json").string();
}

/// Generates `count` phantoms under out_dir. The first count-val_count get
/// the train split. Deterministic per seed: sample k uses the RNG stream
/// fork(seed, k).
inline CorpusManifest write_corpus(int count, std::array<int, 3> dims, uint64_t seed,
                                   const std::string& out_dir, int val_count) {
    DUOLIFT_CHECK(count >= 1, "write_corpus: count must be >= 1");
    DUOLIFT_CHECK(val_count >= 0 && val_count < count,
                  "write_corpus: val_count must lie in [0,count), got " << val_count);
    fs::create_directories(out_dir);
    CorpusManifest man;
    man.dims = dims;
    man.seed = seed;
    Rng root(seed);
    for (int k = 0; k < count; ++k) {
        uint64_t sample_seed = root.fork(static_cast<uint64_t>(k)).next_u64();
        PhantomSpec spec = PhantomSpec::randomized(dims, sample_seed);
        Phantom ph = generate_phantom(spec);
        Projection pf = project(ph.volume, View::frontal);
        Projection pl = project(ph.volume, View::lateral);

        std::string name = "sample_" + std::to_string(k);
        fs::path dir = fs::path(out_dir) / name;
        fs::create_directories(dir);
        save_volume((dir / "volume.dlvol").string(), ph.volume);
        save_mask((dir / "lung.dlvol").string(), ph.lung);
        save_mask((dir / "vessel.dlvol").string(), ph.vessel);
        save_mask((dir / "body.dlvol").string(), ph.body);
        save_projection((dir / "frontal.dlvol").string(), pf);
        save_projection((dir / "lateral.dlvol").string(), pl);

        SampleRecord rec;
        rec.dir = name;
        rec.seed = sample_seed;
        rec.split = k < count - val_count ? "train" : "val";
        man.samples.push_back(rec);
    }

    nlohmann::json j;
    j["dims"] = man.dims;
    j["seed"] = man.seed;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : man.samples) {
        j["samples"].push_back({{"dir", s.dir},
                                {"seed", s.seed},
                                {"split", s.split},
                                {"volume", s.dir + "/volume.dlvol"},
                                {"lung", s.dir + "/lung.dlvol"},
                                {"vessel", s.dir + "/vessel.dlvol"},
                                {"body", s.dir + "/body.dlvol"},
                                {"frontal", s.dir + "/frontal.dlvol"},
                                {"lateral", s.dir + "/lateral.dlvol"}});
    }
    io::write_text_file(corpus_manifest_path(out_dir), j.dump(2) + "\n");
    return man;
}

inline CorpusManifest read_corpus_manifest(const std::string& corpus_dir) {
    nlohmann::json j = nlohmann::json::parse(io::read_text_file(corpus_manifest_path(corpus_dir)));
    CorpusManifest man;
    man.dims = j.at("dims").get<std::array<int, 3>>();
    man.seed = j.at("seed").get<uint64_t>();
    for (const auto& js : j.at("samples")) {
        SampleRecord rec;
        rec.dir = js.at("dir").get<std::string>();
        rec.seed = js.at("seed").get<uint64_t>();
        rec.split = js.at("split").get<std::string>();
        man.samples.push_back(rec);
    }
    return man;
}

inline Sample load_sample(const std::string& corpus_dir, const SampleRecord& rec) {
    fs::path dir = fs::path(corpus_dir) / rec.dir;
    Sample s;
    s.target = load_volume((dir / "volume.dlvol").string());
    s.lung = load_mask((dir / "lung.dlvol").string(), MaskLabel::lung);
    s.vessel = load_mask((dir / "vessel.dlvol").string(), MaskLabel::vessel);
    s.body = load_mask((dir / "body.dlvol").string(), MaskLabel::body);
    s.frontal = load_projection((dir / "frontal.dlvol").string(), View::frontal);
    s.lateral = load_projection((dir / "lateral.dlvol").string(), View::lateral);
    s.seed = rec.seed;
    s.split = rec.split;
    return s;
}

struct Corpus {
    std::array<int, 3> dims{};
    std::vector<Sample> train, val;
};

inline Corpus load_corpus(const std::string& corpus_dir) {
    CorpusManifest man = read_corpus_manifest(corpus_dir);
    Corpus c;
    c.dims = man.dims;
    for (const auto& rec : man.samples) {
        Sample s = load_sample(corpus_dir, rec);
        (rec.split == "val" ? c.val : c.train).push_back(std::move(s));
    }
    return c;
}

}  // namespace duolift
