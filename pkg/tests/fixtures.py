"""Fixture designs.

Two families:

* ``REAL_*`` — genuine Verilog for runs against an installed toolchain
  (skipped when none is present). The expected traces were hand-simulated:
  the glitched counter shows 8 instead of 9 at check 9 (exactly 1 mismatch in
  16); the inverted-carry mutant jumps 0 -> 9 so its first mismatch is at
  check 1.
* ``stub_*`` — marker-driven sources understood by the stub toolchain; used
  everywhere speed matters.
"""

from rtlforge.problems import Problem

# --------------------------------------------------------------------------
# Real Verilog: 4-bit counter

REAL_COUNTER_DUT = """\
module counter4(input clk, input rst, output reg [3:0] q);
  always @(posedge clk)
    q <= rst ? 4'd0 : q + 4'd1;
endmodule
"""

# Output mux glitch: internal count is right, the visible value is wrong only
# when the count is 9 (shows 8). One mismatch in 16 checks -> score 0.9375.
REAL_COUNTER_GLITCH9 = """\
module counter4(input clk, input rst, output [3:0] q);
  reg [3:0] count;
  always @(posedge clk)
    count <= rst ? 4'd0 : count + 4'd1;
  assign q = (count == 4'd9) ? (count ^ 4'b0001) : count;
endmodule
"""

# Inverted carry into bit 3: from 0000 the next state is 1001, so the first
# post-reset increment already diverges (expected 1, got 9) -> mismatch at 1.
REAL_COUNTER_BADCARRY = """\
module counter4(input clk, input rst, output reg [3:0] q);
  always @(posedge clk) begin
    if (rst)
      q <= 4'd0;
    else begin
      q[0] <= ~q[0];
      q[1] <= q[1] ^ q[0];
      q[2] <= q[2] ^ (q[1] & q[0]);
      q[3] <= q[3] ^ ~(q[2] & q[1] & q[0]);
    end
  end
endmodule
"""

REAL_COUNTER_TB = """\
`timescale 1ns/1ps
module counter4_tb;
  reg clk = 0;
  reg rst;
  wire [3:0] q;
  reg [3:0] expected;
  integer t = 0;
  integer mismatches = 0;
  integer first_mismatch = -1;

  counter4 dut(.clk(clk), .rst(rst), .q(q));
  always #5 clk = ~clk;

  task check;
    begin
      if (q === expected) begin
        $display("CHECK time=%0d in:rst=%b dut:q=4'b%b exp:q=4'b%b status=MATCH",
                 t, rst, q, expected);
      end else begin
        if (first_mismatch == -1) first_mismatch = t;
        mismatches = mismatches + 1;
        $display("CHECK time=%0d in:rst=%b dut:q=4'b%b exp:q=4'b%b status=MISMATCH",
                 t, rst, q, expected);
      end
      t = t + 1;
    end
  endtask

  initial begin
    rst = 1;
    expected = 4'd0;
    @(posedge clk);
    #1 check;
    rst = 0;
    repeat (15) begin
      expected = expected + 4'd1;
      @(posedge clk);
      #1 check;
    end
    if (first_mismatch == -1)
      $display("SUMMARY total=%0d mismatches=%0d first_mismatch=none", t, mismatches);
    else
      $display("SUMMARY total=%0d mismatches=%0d first_mismatch=%0d",
               t, mismatches, first_mismatch);
    $finish;
  end
endmodule
"""

REAL_COUNTER_GOLDEN_TB = """\
`timescale 1ns/1ps
module counter4_golden_tb;
  reg clk = 0;
  reg rst;
  wire [3:0] q;
  reg [3:0] expected;
  integer total = 0;
  integer errors = 0;

  counter4 dut(.clk(clk), .rst(rst), .q(q));
  always #5 clk = ~clk;

  task check;
    begin
      total = total + 1;
      if (q !== expected) errors = errors + 1;
    end
  endtask

  initial begin
    rst = 1;
    expected = 4'd0;
    @(posedge clk);
    #1 check;
    rst = 0;
    repeat (15) begin
      expected = expected + 4'd1;
      @(posedge clk);
      #1 check;
    end
    $display("Mismatches: %0d in %0d samples", errors, total);
    $finish;
  end
endmodule
"""

# --------------------------------------------------------------------------
# Real Verilog: 2:1 mux (combinational)

REAL_MUX_DUT = """\
module mux2(input a, input b, input sel, output y);
  assign y = sel ? b : a;
endmodule
"""

REAL_MUX_TB = """\
`timescale 1ns/1ps
module mux2_tb;
  reg a, b, sel;
  wire y;
  reg expected;
  integer t = 0;
  integer mismatches = 0;
  integer first_mismatch = -1;
  integer v;

  mux2 dut(.a(a), .b(b), .sel(sel), .y(y));

  task check;
    begin
      expected = sel ? b : a;
      if (y === expected) begin
        $display("CHECK time=%0d in:a=%b,b=%b,sel=%b dut:y=%b exp:y=%b status=MATCH",
                 t, a, b, sel, y, expected);
      end else begin
        if (first_mismatch == -1) first_mismatch = t;
        mismatches = mismatches + 1;
        $display("CHECK time=%0d in:a=%b,b=%b,sel=%b dut:y=%b exp:y=%b status=MISMATCH",
                 t, a, b, sel, y, expected);
      end
      t = t + 1;
    end
  endtask

  initial begin
    for (v = 0; v < 8; v = v + 1) begin
      {sel, b, a} = v[2:0];
      #1 check;
      #1;
    end
    if (first_mismatch == -1)
      $display("SUMMARY total=%0d mismatches=%0d first_mismatch=none", t, mismatches);
    else
      $display("SUMMARY total=%0d mismatches=%0d first_mismatch=%0d",
               t, mismatches, first_mismatch);
    $finish;
  end
endmodule
"""

REAL_MUX_GOLDEN_TB = """\
`timescale 1ns/1ps
module mux2_golden_tb;
  reg a, b, sel;
  wire y;
  integer total = 0;
  integer errors = 0;
  integer v;

  mux2 dut(.a(a), .b(b), .sel(sel), .y(y));

  initial begin
    for (v = 0; v < 8; v = v + 1) begin
      {sel, b, a} = v[2:0];
      #1;
      total = total + 1;
      if (y !== (sel ? b : a)) errors = errors + 1;
      #1;
    end
    $display("Mismatches: %0d in %0d samples", errors, total);
    $finish;
  end
endmodule
"""

# --------------------------------------------------------------------------
# Real Verilog: D flip-flop

REAL_DFF_DUT = """\
module dff(input clk, input d, output reg q);
  always @(posedge clk) q <= d;
endmodule
"""

REAL_DFF_TB = """\
`timescale 1ns/1ps
module dff_tb;
  reg clk = 0;
  reg d;
  wire q;
  reg expected;
  reg [7:0] pattern = 8'b10110010;
  integer t = 0;
  integer mismatches = 0;
  integer first_mismatch = -1;
  integer i;

  dff dut(.clk(clk), .d(d), .q(q));
  always #5 clk = ~clk;

  task check;
    begin
      if (q === expected) begin
        $display("CHECK time=%0d in:d=%b dut:q=%b exp:q=%b status=MATCH", t, d, q, expected);
      end else begin
        if (first_mismatch == -1) first_mismatch = t;
        mismatches = mismatches + 1;
        $display("CHECK time=%0d in:d=%b dut:q=%b exp:q=%b status=MISMATCH", t, d, q, expected);
      end
      t = t + 1;
    end
  endtask

  initial begin
    for (i = 0; i < 8; i = i + 1) begin
      d = pattern[i];
      expected = pattern[i];
      @(posedge clk);
      #1 check;
    end
    if (first_mismatch == -1)
      $display("SUMMARY total=%0d mismatches=%0d first_mismatch=none", t, mismatches);
    else
      $display("SUMMARY total=%0d mismatches=%0d first_mismatch=%0d",
               t, mismatches, first_mismatch);
    $finish;
  end
endmodule
"""

REAL_DFF_GOLDEN_TB = """\
`timescale 1ns/1ps
module dff_golden_tb;
  reg clk = 0;
  reg d;
  wire q;
  reg [7:0] pattern = 8'b10110010;
  integer total = 0;
  integer errors = 0;
  integer i;

  dff dut(.clk(clk), .d(d), .q(q));
  always #5 clk = ~clk;

  initial begin
    for (i = 0; i < 8; i = i + 1) begin
      d = pattern[i];
      @(posedge clk);
      #1;
      total = total + 1;
      if (q !== pattern[i]) errors = errors + 1;
    end
    $display("Mismatches: %0d in %0d samples", errors, total);
    $finish;
  end
endmodule
"""

COUNTER_SPEC = (
    "A 4-bit synchronous binary counter named counter4 with a clock input "
    "clk and a synchronous active-high reset rst. On every rising clock edge "
    "the 4-bit output q increments by one; when rst is high at the edge, q "
    "resets to zero instead. The counter wraps from 15 back to 0."
)
COUNTER_INTERFACE = "module counter4(input clk, input rst, output reg [3:0] q);"

MUX_SPEC = (
    "A combinational 2:1 multiplexer named mux2 with one-bit data inputs a "
    "and b, a select input sel, and output y. y equals a when sel is 0 and b "
    "when sel is 1."
)
MUX_INTERFACE = "module mux2(input a, input b, input sel, output y);"

DFF_SPEC = (
    "A positive-edge-triggered D flip-flop named dff with clock input clk, "
    "data input d, and output q. On every rising edge of clk, q takes the "
    "value of d."
)
DFF_INTERFACE = "module dff(input clk, input d, output reg q);"


# --------------------------------------------------------------------------
# Stub-marker sources (fast paths)


def stub_dut(behavior: str, name: str = "counter4", err_line: int = 0) -> str:
    err = f"//ERR:{err_line}:syntax error near marker\n" if err_line else ""
    return (
        f"module {name}(input clk, input rst, output reg [3:0] q);\n"
        f"//DUT_BEHAVIOR:{behavior}\n"
        f"{err}"
        "  always @(posedge clk) q <= rst ? 4'd0 : q + 4'd1;\n"
        "endmodule\n"
    )


def stub_tb(name: str = "counter4_tb", emits: dict[str, str] | None = None) -> str:
    emit_lines = "".join(
        f"//TB_EMIT:{key}|{payload}\n" for key, payload in (emits or {}).items()
    )
    return (
        f"module {name};\n"
        f"{emit_lines}"
        "  reg clk = 0; reg rst;\n"
        "  wire [3:0] q;\n"
        "  counter4 dut(.clk(clk), .rst(rst), .q(q));\n"
        "  always #5 clk = ~clk;\n"
        "endmodule\n"
    )


def stub_golden_tb() -> str:
    """Golden bench for stub runs: banner selected by the DUT behavior key."""
    return (
        "module counter4_golden_tb;\n"
        "//TB_EMIT:counter16|Mismatches: 0 in 16 samples\n"
        "//TB_EMIT:counter16:glitch@9|Mismatches: 1 in 16 samples\n"
        "//TB_EMIT:score:0:16|Mismatches: 0 in 16 samples\n"
        "//TB_EMIT:score:1:16|Mismatches: 1 in 16 samples\n"
        "  wire [3:0] q;\n"
        "  counter4 dut(.clk(1'b0), .rst(1'b0), .q(q));\n"
        "endmodule\n"
    )


def fenced(code: str, preamble: str = "Here is the design.") -> str:
    return f"{preamble}\n\n```verilog\n{code}```\n"


def stub_counter_problem(with_golden: bool = False) -> Problem:
    return Problem(
        task_id="counter4",
        spec=COUNTER_SPEC,
        module_interface=COUNTER_INTERFACE,
        golden_testbench=stub_golden_tb() if with_golden else None,
    )
