// Mix one 802.11g collision, then detect, classify and print the annotated
// packet. Usage: collision_demo [calibration.json]

#include <iostream>

#include "ctilab/cti_models.hpp"
#include "ctilab/harness.hpp"

using namespace ctilab;

int main(int argc, char** argv)
{
    const std::string calib = argc > 1 ? argv[1] : "data/calibration.json";
    try {
        const auto cal = calibration_from_json(read_json_file(calib));

        SceneRecipe recipe;
        recipe.overlap_first = 30;
        recipe.overlap_symbols = 0; // interfere to the end of the frame
        const auto scene = make_scene(recipe, InterfererKind::Wifi11g, 0.0, 15.0, 42);
        const auto rx = mix(scene);

        const auto d = detect(rx, cal.detection);
        std::optional<InterferenceClass> cls;
        if (!cti_symbols(d).empty())
            cls = differentiate(rx.waveform, d, cal.templates);
        std::cout << render_text(annotate_packet(d, cls));
    } catch (const Error& e) {
        std::cerr << "collision_demo: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
