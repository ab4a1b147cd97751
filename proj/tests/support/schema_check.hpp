// Just enough JSON-Schema to validate the shipped report schemas: type,
// required, properties, items, minItems, maxItems.
#pragma once

#include <string>

#include "json.hpp"

namespace schema_check {

using nlohmann::json;

inline bool type_matches(const std::string& type, const json& value) {
    if (type == "object") return value.is_object();
    if (type == "array") return value.is_array();
    if (type == "number") return value.is_number();
    if (type == "integer") return value.is_number_integer() || value.is_number_unsigned();
    if (type == "boolean") return value.is_boolean();
    if (type == "string") return value.is_string();
    if (type == "null") return value.is_null();
    return false;
}

inline bool conforms(const json& schema, const json& value, std::string& error,
                     const std::string& path = "$") {
    if (schema.contains("type")) {
        const json& type = schema["type"];
        bool ok = false;
        if (type.is_string()) ok = type_matches(type.get<std::string>(), value);
        else
            for (const auto& t : type) ok = ok || type_matches(t.get<std::string>(), value);
        if (!ok) {
            error = path + ": type mismatch";
            return false;
        }
    }
    if (value.is_null()) return true;  // nullable fields skip structural checks
    if (schema.contains("required") && value.is_object())
        for (const auto& key : schema["required"])
            if (!value.contains(key.get<std::string>())) {
                error = path + ": missing required key '" + key.get<std::string>() + "'";
                return false;
            }
    if (schema.contains("properties") && value.is_object())
        for (const auto& [key, sub] : schema["properties"].items())
            if (value.contains(key) && !conforms(sub, value[key], error, path + "." + key))
                return false;
    if (value.is_array()) {
        if (schema.contains("minItems") && value.size() < schema["minItems"].get<std::size_t>()) {
            error = path + ": too few items";
            return false;
        }
        if (schema.contains("maxItems") && value.size() > schema["maxItems"].get<std::size_t>()) {
            error = path + ": too many items";
            return false;
        }
        if (schema.contains("items"))
            for (std::size_t i = 0; i < value.size(); ++i)
                if (!conforms(schema["items"], value[i], error,
                              path + "[" + std::to_string(i) + "]"))
                    return false;
    }
    return true;
}

}  // namespace schema_check
