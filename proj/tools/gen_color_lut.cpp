// Writes the reference nearest-prototype color LUT.
#include "netdissect/concept_store.hpp"

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: gen_color_lut <out.lut> [bits]\n";
        return 1;
    }
    unsigned bits = argc > 2 ? static_cast<unsigned>(std::atoi(argv[2])) : 5;
    try {
        netdissect::ColorLUT::nearest_prototype(bits).write(argv[1]);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
