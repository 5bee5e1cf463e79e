#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mostdsa/image_io.hpp"
#include "mostdsa/synth.hpp"

// Dataset layout: one directory per scene (scene_0000, ...) holding
// frame_0000.png ... plus a plain-text manifest (seed, regime, resolution,
// frame count).

namespace mostdsa {
namespace data {

namespace fs = std::filesystem;

struct Scene {
    std::string id;
    std::uint64_t seed = 0;
    synth::Regime regime = synth::Regime::mixed;
    std::vector<Tensor<float>> frames;
};

inline void write_scene(const fs::path& dir, const Scene& scene) {
    fs::create_directories(dir);
    char name[32];
    for (std::size_t i = 0; i < scene.frames.size(); ++i) {
        std::snprintf(name, sizeof name, "frame_%04zu.png", i);
        image_io::write_png_gray8((dir / name).string(), scene.frames[i]);
    }
    const Shape& s = scene.frames.front().shape();
    std::ofstream mf(dir / "manifest.txt");
    mf << "seed = " << scene.seed << "\n";
    mf << "regime = " << synth::regime_name(scene.regime) << "\n";
    mf << "resolution = " << s.h << "x" << s.w << "\n";
    mf << "frames = " << scene.frames.size() << "\n";
}

// Generates `count` scenes (seeds derived from base_seed + index) and writes
// them under out_dir. The mixed regime combines diffusion and rotation.
inline void generate_dataset(const std::string& out_dir, int count, int n_frames, int h, int w,
                             synth::Regime regime, std::uint64_t base_seed) {
    for (int i = 0; i < count; ++i) {
        Scene scene;
        char id[32];
        std::snprintf(id, sizeof id, "scene_%04d", i);
        scene.id = id;
        scene.seed = base_seed + std::uint64_t(i) * 7919;
        scene.regime = regime;
        scene.frames = synth::generate_sequence(scene.seed, n_frames, h, w, regime);
        write_scene(fs::path(out_dir) / id, scene);
    }
}

inline Scene load_scene(const fs::path& dir) {
    Scene scene;
    scene.id = dir.filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) scene.frames.push_back(image_io::read_png_gray8(f.string()));
    if (scene.frames.empty())
        throw RuntimeFailure("scene directory '" + dir.string() + "' holds no PNG frames");

    std::ifstream mf(dir / "manifest.txt");
    std::string line;
    while (std::getline(mf, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, line.find(' '));
        const std::string val = line.substr(eq + 1);
        if (key == "seed") scene.seed = std::stoull(val);
        if (key == "regime") {
            std::string v = val;
            v.erase(0, v.find_first_not_of(' '));
            scene.regime = synth::parse_regime(v);
        }
    }
    return scene;
}

inline std::vector<Scene> load_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) throw RuntimeFailure("dataset directory '" + dir + "' not found");
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw RuntimeFailure("dataset directory '" + dir + "' holds no scenes");
    std::vector<Scene> scenes;
    scenes.reserve(dirs.size());
    for (const auto& d : dirs) scenes.push_back(load_scene(d));
    return scenes;
}

}  // namespace data
}  // namespace mostdsa
