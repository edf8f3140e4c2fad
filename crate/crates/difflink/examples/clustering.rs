//! Prompt parsing, knowledge-graph similarity and user grouping.
//!
//! Run with: cargo run --example clustering

use difflink::semantic::{
    cluster, default_graph, parse_prompt, shared_condition, similarity, SharedPolicy,
};

fn main() -> difflink::Result<()> {
    let graph = default_graph();
    let texts = [
        ("user1", "Apple on Table"),
        ("user2", "Lemon on Table"),
        ("user3", "A bird on a table"),
        ("user4", "A cat on a table"),
        ("user5", "Car on Road"),
    ];
    let prompts: Vec<_> = texts
        .iter()
        .map(|(u, t)| parse_prompt(u, t, &graph))
        .collect::<difflink::Result<_>>()?;

    for p in &prompts {
        println!("{}: {:?} -> {:?}", p.user, p.text, p.concepts);
    }

    println!("\npairwise similarity:");
    print!("{:>8}", "");
    for p in &prompts {
        print!("{:>8}", p.user);
    }
    println!();
    for a in &prompts {
        print!("{:>8}", a.user);
        for b in &prompts {
            print!("{:>8.3}", similarity(a, b, &graph));
        }
        println!();
    }

    let threshold = 0.5;
    let assignment = cluster(&prompts, threshold, &graph)?;
    println!("\ngroups at threshold {threshold}:");
    for (i, g) in assignment.groups.iter().enumerate() {
        let users: Vec<&str> = g.user_ids().collect();
        println!("  group {i}: {:?} (leader {})", users, g.leader().user);
        let leader = shared_condition(g, SharedPolicy::Leader, 0.02)?;
        let union = shared_condition(g, SharedPolicy::Union, 0.02)?;
        println!(
            "    leader condition: {:?}",
            leader.concepts().collect::<Vec<_>>()
        );
        println!(
            "    union condition:  {:?}",
            union.concepts().collect::<Vec<_>>()
        );
    }

    // the graph grows without disturbing existing relations
    let extended = graph.add_concept("pear", "Pear", &["fruit"])?;
    let pear = parse_prompt("user6", "pear", &extended)?;
    let apple = parse_prompt("user1", "apple", &extended)?;
    println!(
        "\nafter adding 'pear' under fruit: similarity(pear, apple) = {:.3}",
        similarity(&pear, &apple, &extended)
    );
    Ok(())
}
