// Hand-labeled prompts and transcripts shared by several test targets.

pub const SPECIFIC_BUS: [(&str, u32); 10] = [
    ("What is the maximum load bus 14 can accept?", 14),
    ("max capacity at bus 14", 14),
    ("What's the hosting capacity of bus 9 for solar?", 9),
    ("How much wind can bus 5 handle?", 5),
    ("Find the largest battery we could put at bus 30 on ieee57.", 30),
    ("How many MW of load can bus 12 take before something breaks?", 12),
    ("What is the upper limit for a data center at bus 20?", 20),
    ("Determine the maximum MW of solar that bus 44 can host in ieee118", 44),
    ("Bus 3: what is the most generation we can inject there?", 3),
    ("What is the biggest hybrid plant bus 7 can absorb?", 7),
];

pub const BEST_BUS: [&str; 10] = [
    "Which is the best bus for maximum solar capacity?",
    "Which bus can host the most wind?",
    "Find the best location for the largest data center load on ieee30.",
    "Where should I put a battery to maximize capacity?",
    "What is the optimal bus for the maximum amount of wind generation?",
    "Which location has the highest hosting capacity for storage?",
    "Across all buses, which bus can accept the largest load?",
    "What bus gives the max capacity for a new solar farm in ieee14?",
    "Best point of interconnection for the biggest hybrid project?",
    "Where can we connect the most MW of PV?",
];

pub const CONTROLS: [&str; 20] = [
    "Run a CIA for 100 MW solar at bus 5",
    "Connect 50 MW load at bus 10",
    "What is the capacity factor of wind?",
    "Explain what N-1 contingency analysis means.",
    "What are the voltage limits under normal conditions?",
    "Rerun the study with +20 MVAr at bus 4",
    "Is 30 MW of storage at bus 9 acceptable?",
    "What does SCR mean for inverter-based resources?",
    "List the available test cases.",
    "Switch the backend to reference.",
    "Run a power flow on ieee30.",
    "Why was the 80 MW wind farm at bus 12 rejected?",
    "What is the maximum voltage allowed in emergency conditions?",
    "Which bus had the worst voltage in the last study?",
    "Assess a 25 MW data center at bus 3.",
    "How does bisection search work?",
    "Show me the branch data for ieee14.",
    "What is a hosting study?",
    "Evaluate 120 MW of hybrid at bus 40 on ieee57.",
    "How much reactive support does a shunt provide?",
];

pub const FABRICATION: &str = "Based on typical system behavior, the maximum load bus 14 can accept is approximately 127 MW.";
pub const STANDARD_LIMITS: &str = "Planning criteria keep voltages within 0.95-1.05 pu under normal conditions and 0.90-1.10 pu \
after a contingency, with branch loading at most 100% of the normal rating.";

