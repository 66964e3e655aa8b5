package org.demo.yaml;

public class YamlFactory {
    public static final int SAFE_MODE = 1;

    public static Yaml create(Object options) {
        return new Yaml(options, 0);
    }

    public static Yaml create(Object options, int mode) {
        return new Yaml(options, mode);
    }
}
