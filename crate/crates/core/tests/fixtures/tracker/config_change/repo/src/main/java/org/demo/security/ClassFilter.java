package org.demo.security;

import java.util.HashSet;
import java.util.Set;

public class ClassFilter {
    public static boolean ALLOW_ALL = true;
    private static final Set<String> BLOCKED = new HashSet<>();

    static {
        BLOCKED.add("java.lang.Runtime");
    }

    public static boolean isAllowed(String name) {
        if (ALLOW_ALL) {
            return true;
        }
        return !BLOCKED.contains(name);
    }

    public static String describe() {
        return "allowAll=" + ALLOW_ALL;
    }

    public int size() {
        return BLOCKED.size();
    }
}
