//! Gnuplot scripts that read the CSV outputs from the same directory.

const PREAMBLE: &str = "set datafile separator ','\nset key autotitle columnhead\nset grid\nset terminal pngcairo size 900,600\n";

pub fn chi_script(csv: &str) -> String {
    format!(
        "{PREAMBLE}set output 'chi.png'\nset xlabel 'gamma'\nset ylabel 'chi'\nset y2label \"chi'\"\nset y2tics\n\
         plot '{csv}' using 1:2 with linespoints title 'chi', \\\n     '{csv}' using 1:3 axes x1y2 with lines title \"chi'\"\n"
    )
}

pub fn rate_script(csv: &str) -> String {
    format!(
        "{PREAMBLE}set output 'rate.png'\nset xlabel 'kappa'\nset ylabel 'J(kappa)'\n\
         plot '{csv}' using 1:(strcol(5) eq 'interior' ? $3 : NaN) with linespoints title 'J'\n"
    )
}

pub fn slope_script(sim_csv: &str, slope: f64, intercept: f64) -> String {
    format!(
        "{PREAMBLE}set output 'slope.png'\nset xlabel 'T'\nset ylabel 'log p'\n\
         f(x) = {intercept:.12e} + {slope:.12e} * x\n\
         plot '{sim_csv}' using 1:(log($3)) with points pt 7 title 'log p', f(x) with lines title 'OLS fit'\n"
    )
}
