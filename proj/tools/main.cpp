#include "fmk_cli.hpp"

int main(int argc, char** argv) {
    return fmk::cli::run(argc, argv).code;
}
