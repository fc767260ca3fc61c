// Minimal external SUT speaking the newline-delimited JSON protocol. Every operation costs 2 units and
// estimates 0.5. Passing "fail" as the first argument makes the third operation answer with an error.
#include <iostream>
#include <string>

#include <nlohmann/json.hpp>

int main(int argc, char** argv) {
    const bool fail = argc > 1 && std::string(argv[1]) == "fail";
    std::string line;
    int ops = 0;
    while (std::getline(std::cin, line)) {
        const auto msg = nlohmann::json::parse(line);
        const std::string op = msg.at("op");
        nlohmann::json reply;
        if (op == "setup") {
            reply = {{"ok", true}, {"rows_hint", msg.at("args").at("train_csv")}};
        } else if (op == "teardown") {
            std::cout << nlohmann::json{{"ok", true}}.dump() << std::endl;
            return 0;
        } else if (fail && ++ops == 3) {
            reply = {{"error", "injected failure"}};
        } else {
            reply = {{"cost_units", 2.0}};
            if (op == "estimate") reply["estimate"] = 0.5;
        }
        std::cout << reply.dump() << std::endl;
    }
    return 0;
}
