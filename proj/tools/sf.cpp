#include "sf/cli.hpp"

int main(int argc, char** argv) { return sf::run(argc, argv); }
