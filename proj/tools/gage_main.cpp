#include "gage/cli.hpp"

int main(int argc, char** argv) {
    return gage::cli::run(argc, argv);
}
