#include "hazesynth/cli.hpp"

int main(int argc, char** argv) {
    return hazesynth::cli::run(argc, argv);
}
